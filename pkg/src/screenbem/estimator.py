"""Two-level a posteriori estimator and energy extrapolation.

The estimator compares the Galerkin solution u_h with the solution
u_{h/2} on the uniform refinement.  With d = u_{h/2} - P u_h the local
indicator of a coarse element T is

    theta_T^2 = h_T * int_T |curl d|^2 + nu * int_{gamma cap dT} [d]^2,

where the curl part is summed over the four children of T and the jump
part over the skeleton sub-segments on the boundary of T.  Every
interface piece lies on the boundary of exactly two coarse elements, so
the global splitting is

    Theta^2 = sum_T theta_T^2 = Theta_1^2 + 2 nu Theta_2^2,

with Theta_1^2 the h-weighted curl term and Theta_2^2 = ||[d]||^2 the
plain jump mass.  The error surrogate combines the energy defect
against an extrapolated reference energy with the penalized jump of
u_h itself:

    total^2 = |E_ex^2 - <f, u_h>| + nu ||[u_h]||^2.

E_ex^2 is obtained from three consecutive energies by fitting the
geometric model E_inf - E_k = C * N_k^(-beta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .assembly import element_curls, jump_squared_by_subsegment
from .solve import PairSolution

__all__ = [
    "CSV_HEADER",
    "ConvergenceRecord",
    "EstimatorBreakdown",
    "ExtrapolationResult",
    "compute_indicators",
    "energy_value",
    "extrapolate_energy",
    "format_record",
    "records_to_csv",
]

CSV_HEADER = "step,kind,N,energy,error1,error2,estim1,estim2,theta,total_error"


@dataclass(frozen=True)
class EstimatorBreakdown:
    """Local and global pieces of the two-level estimator."""

    element_sq: np.ndarray  # (num coarse elements,) theta_T^2
    theta1_sq: float  # sum_T h_T int_T |curl d|^2
    theta2_sq: float  # ||[d]||^2 on the skeleton
    theta_sq: float  # theta1_sq + 2 nu theta2_sq
    jump_sq_coarse: float  # ||[u_h]||^2 of the coarse solution

    @property
    def theta(self) -> float:
        return math.sqrt(self.theta_sq)


def compute_indicators(sol: PairSolution) -> EstimatorBreakdown:
    """Evaluate the two-level indicators for one coarse/fine solve."""
    fine = sol.fine
    coarse = sol.coarse
    dofs_f = sol.blocks.dofs
    d = sol.u_fine - np.asarray(sol.prolong @ sol.u_coarse)

    # curl d is constant per fine element
    areas, curls = element_curls(fine)
    dv = np.where(
        dofs_f.vertex_dof[fine.triangles] >= 0,
        d[np.clip(dofs_f.vertex_dof[fine.triangles], 0, None)],
        0.0,
    )  # (ne_f, 3)
    grad = np.einsum("el,eli->ei", dv, curls)
    curl_sq = areas * (grad**2).sum(axis=1)

    ne_c = coarse.num_elements
    acc = np.zeros(ne_c)
    np.add.at(acc, fine.parent, curl_sq)
    h = coarse.element_diameters()
    element_sq = h * acc
    theta1_sq = float(element_sq.sum())

    # jump of d on the fine skeleton, attributed to both coarse sides
    skel = sol.blocks.skeleton
    jumps = jump_squared_by_subsegment(fine, skel, dofs_f, d)
    theta2_sq = float(jumps.sum())
    nu = sol.nu
    for k, ss in enumerate(skel.subsegments):
        element_sq[fine.parent[ss.left_element]] += nu * jumps[k]
        element_sq[fine.parent[ss.right_element]] += nu * jumps[k]

    u_c_fine = np.asarray(sol.prolong @ sol.u_coarse)
    jump_sq_coarse = float(
        jump_squared_by_subsegment(fine, skel, dofs_f, u_c_fine).sum()
    )
    return EstimatorBreakdown(
        element_sq=element_sq,
        theta1_sq=theta1_sq,
        theta2_sq=theta2_sq,
        theta_sq=theta1_sq + 2.0 * nu * theta2_sq,
        jump_sq_coarse=jump_sq_coarse,
    )


def energy_value(rhs: np.ndarray, u: np.ndarray) -> float:
    """Galerkin energy <f, u_h>; exact since the load is assembled
    exactly."""
    return float(np.dot(rhs, u))


@dataclass(frozen=True)
class ExtrapolationResult:
    value: float  # E_inf estimate (last energy when not converged)
    beta: float  # fitted rate, nan when unavailable
    converged: bool


def extrapolate_energy(ns, energies) -> ExtrapolationResult:
    """Fit E_inf - E_k = C N_k^(-beta) through the last three points.

    Works for arbitrary increasing N (the rate is found by a bracketed
    root solve), so both uniform and adaptive histories extrapolate.
    A non-contracting or non-monotone tail is flagged and the last
    energy returned as the fallback reference.
    """
    ns = np.asarray(ns, dtype=float)
    energies = np.asarray(energies, dtype=float)
    if len(ns) != len(energies):
        raise ValueError("ns and energies must have equal length")
    if len(ns) < 3:
        raise ValueError("need at least three energies to extrapolate")
    n0, n1, n2 = ns[-3:]
    e0, e1, e2 = energies[-3:]
    if not (n0 < n1 < n2):
        raise ValueError("N must be strictly increasing")
    d10 = e1 - e0
    d21 = e2 - e1
    if d21 == 0.0 and d10 == 0.0:
        return ExtrapolationResult(value=e2, beta=float("nan"), converged=True)
    if d10 == 0.0 or d21 / d10 <= 0.0 or abs(d21) >= abs(d10):
        # stalled, non-monotone, or non-contracting history
        return ExtrapolationResult(value=e2, beta=float("nan"), converged=False)
    r_obs = d21 / d10

    def gap(beta):
        w0, w1, w2 = ns[-3:] ** (-beta)
        return (w1 - w2) / (w0 - w1) - r_obs

    lo, hi = 1e-6, 50.0
    if gap(lo) <= 0.0 or gap(hi) >= 0.0:
        return ExtrapolationResult(value=e2, beta=float("nan"), converged=False)
    beta = brentq(gap, lo, hi, xtol=1e-14, rtol=8.9e-16)
    w1, w2 = n1**-beta, n2**-beta
    c = d21 / (w1 - w2)
    return ExtrapolationResult(value=e2 + c * w2, beta=beta, converged=True)


@dataclass
class ConvergenceRecord:
    """One row of a convergence study; error fields are backfilled once
    the reference energy is known."""

    step: int
    kind: str  # "uniform" or "adaptive"
    N: int  # coarse degrees of freedom
    N_fine: int
    energy: float  # <f, u_h> on the coarse mesh
    estim1: float  # Theta_1
    estim2: float  # Theta_2
    theta: float
    nu: float
    jump_sq_coarse: float
    error1: float = field(default=float("nan"))
    error2: float = field(default=float("nan"))
    total: float = field(default=float("nan"))

    def backfill_errors(self, e_ex_sq: float) -> None:
        defect = abs(e_ex_sq - self.energy)
        self.error1 = math.sqrt(defect)
        self.error2 = math.sqrt(self.nu * self.jump_sq_coarse)
        self.total = math.sqrt(defect + self.nu * self.jump_sq_coarse)


def format_record(r: ConvergenceRecord) -> str:
    vals = (r.energy, r.error1, r.error2, r.estim1, r.estim2, r.theta, r.total)
    nums = ",".join(f"{v:.17g}" for v in vals)
    return f"{r.step},{r.kind},{r.N},{nums}"


def records_to_csv(records) -> str:
    lines = [CSV_HEADER]
    lines.extend(format_record(r) for r in records)
    return "\n".join(lines) + "\n"
