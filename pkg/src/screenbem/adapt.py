"""Convergence studies: uniform refinement and the adaptive loop.

One study step solves on a mesh and its uniform refinement, evaluates
the two-level indicators, and records the energy and estimator values.
The adaptive loop then marks a minimal bulk of the largest indicators
and bisects the marked elements; the uniform loop promotes the fine
mesh to the next coarse one.  Error columns are backfilled after the
run from the extrapolated reference energy of the study's own history.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import PairCache
from .estimator import (
    ConvergenceRecord,
    ExtrapolationResult,
    compute_indicators,
    energy_value,
    extrapolate_energy,
)
from .mesh import (
    Decomposition,
    Mesh,
    build_decomposition,
    generate_initial_mesh,
    refine_adaptive,
)
from .quad import PROFILES
from .solve import solve_pair

__all__ = [
    "MarkingStats",
    "StepDiagnostics",
    "StudyConfig",
    "StudyResult",
    "doerfler_mark",
    "marking_stats",
    "run_study",
]


@dataclass(frozen=True)
class StudyConfig:
    """Parameters of one convergence study."""

    mode: str = "uniform"  # "uniform" or "adaptive"
    nu: float = 100.0
    delta: float = 0.5  # marking bulk parameter
    tol: float = 0.0  # stop once theta <= tol (0: never)
    max_steps: int = 5
    n0: int = 2
    quad_profile: str = "accurate"
    decomposition: str = "four-square"

    def validate(self) -> None:
        if self.mode not in ("uniform", "adaptive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must be in (0, 1], got {self.delta}")
        if self.nu <= 0.0:
            raise ValueError(f"nu must be > 0, got {self.nu}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.n0 < 1:
            raise ValueError(f"n0 must be >= 1, got {self.n0}")
        if self.quad_profile not in PROFILES:
            raise ValueError(f"unknown quad profile {self.quad_profile!r}")
        if self.tol < 0.0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")


def doerfler_mark(element_sq: np.ndarray, delta: float) -> np.ndarray:
    """Minimal set of elements with sum theta_T^2 >= delta^2 Theta^2.

    Indicators are taken in descending order (ties by ascending element
    id), so the returned prefix has minimal cardinality.  The result is
    sorted by element id.
    """
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    element_sq = np.asarray(element_sq, dtype=float)
    if element_sq.ndim != 1 or len(element_sq) == 0:
        raise ValueError("element indicators must be a nonempty 1d array")
    if (element_sq < 0.0).any():
        raise ValueError("negative indicator")
    total = float(element_sq.sum())
    if total == 0.0:
        raise ValueError("all indicators vanish; nothing to mark")
    order = np.lexsort((np.arange(len(element_sq)), -element_sq))
    csum = np.cumsum(element_sq[order])
    target = min(delta**2 * total, csum[-1])
    k = int(np.searchsorted(csum, target))
    marked = order[: k + 1]
    # minimality: dropping the smallest marked indicator breaks the bulk
    assert k == 0 or csum[k - 1] < target
    return np.sort(marked)


@dataclass(frozen=True)
class MarkingStats:
    """Where one step's marked elements sit relative to the geometry."""

    step: int
    n_marked: int
    n_elements: int
    frac_boundary: float  # marked elements touching the screen boundary
    # per interface: (share of marked touching it, share of all
    # elements touching it)
    interface_shares: tuple[tuple[float, float], ...]


def _touching(mesh: Mesh, segments) -> np.ndarray:
    """Boolean (ne,) mask of elements with a vertex on any segment."""
    verts = mesh.vertices
    on = np.zeros(len(verts), dtype=bool)
    for a, b in segments:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        t = b - a
        length = float(np.hypot(*t))
        t = t / length
        rel = verts - a
        arc = rel @ t
        off = np.abs(rel[:, 0] * t[1] - rel[:, 1] * t[0])
        tol = 1e-10 * max(length, 1.0)
        on |= (off <= tol) & (arc >= -tol) & (arc <= length + tol)
    return on[mesh.triangles].any(axis=1)


def marking_stats(
    mesh: Mesh, marked: np.ndarray, dec: Decomposition, step: int
) -> MarkingStats:
    exterior = _touching(mesh, dec.exterior_edges)
    n_marked = len(marked)
    frac_boundary = float(exterior[marked].sum()) / max(n_marked, 1)
    shares = []
    for itf in dec.interfaces:
        touch = _touching(mesh, [(itf.a, itf.b)])
        marked_share = float(touch[marked].sum()) / max(n_marked, 1)
        area_share = float(touch.sum()) / mesh.num_elements
        shares.append((marked_share, area_share))
    return MarkingStats(
        step=step,
        n_marked=n_marked,
        n_elements=mesh.num_elements,
        frac_boundary=frac_boundary,
        interface_shares=tuple(shares),
    )


@dataclass(frozen=True)
class StepDiagnostics:
    orthogonality: float
    residual_coarse: float
    residual_fine: float
    rcond_fine: float
    seconds_assembly: float
    seconds_solve: float
    seconds_estimate: float


@dataclass
class StudyResult:
    config: StudyConfig
    records: list[ConvergenceRecord]
    extrapolation: ExtrapolationResult
    meshes: list[Mesh]  # coarse mesh of every step
    diagnostics: list[StepDiagnostics]
    marking: list[MarkingStats] = field(default_factory=list)
    stopped_by_tol: bool = False


def _study_extrapolation(records) -> ExtrapolationResult:
    """Reference energy from the last three records.

    Adaptive steps add few dofs each, so the geometric fit can fail on
    their history; the flagged fallback (last energy) then applies and
    the error columns become lower bounds of the remaining defect.
    """
    if len(records) < 3:
        return ExtrapolationResult(
            value=records[-1].energy, beta=float("nan"), converged=False
        )
    return extrapolate_energy(
        [r.N for r in records], [r.energy for r in records]
    )


def run_study(cfg: StudyConfig, f=None, on_record=None) -> StudyResult:
    """Run one uniform or adaptive study and backfill error columns.

    ``on_record`` is called with each fresh record (error columns still
    unset) so callers can persist partial histories as the run goes.
    """
    cfg.validate()
    qcfg = PROFILES[cfg.quad_profile]
    dec = build_decomposition(cfg.decomposition)
    mesh = generate_initial_mesh(dec, cfg.n0)
    cache = PairCache(qcfg)
    records: list[ConvergenceRecord] = []
    meshes: list[Mesh] = []
    diagnostics: list[StepDiagnostics] = []
    marking: list[MarkingStats] = []
    stopped = False

    for step in range(cfg.max_steps):
        t0 = time.perf_counter()
        sol = solve_pair(mesh, cfg.nu, qcfg, cache, f)
        t1 = time.perf_counter()
        est = compute_indicators(sol)
        t2 = time.perf_counter()
        u_c_fine = np.asarray(sol.prolong @ sol.u_coarse)
        record = ConvergenceRecord(
            step=step,
            kind=cfg.mode,
            N=sol.dofs_coarse.ndof,
            N_fine=sol.blocks.dofs.ndof,
            energy=energy_value(sol.blocks.rhs, u_c_fine),
            estim1=float(np.sqrt(est.theta1_sq)),
            estim2=float(np.sqrt(est.theta2_sq)),
            theta=est.theta,
            nu=cfg.nu,
            jump_sq_coarse=est.jump_sq_coarse,
        )
        records.append(record)
        if on_record is not None:
            on_record(record)
        meshes.append(mesh)
        diagnostics.append(
            StepDiagnostics(
                orthogonality=sol.orthogonality,
                residual_coarse=sol.stats_coarse.residual,
                residual_fine=sol.stats_fine.residual,
                rcond_fine=sol.stats_fine.rcond,
                seconds_assembly=sol.seconds_assembly,
                seconds_solve=t1 - t0 - sol.seconds_assembly,
                seconds_estimate=t2 - t1,
            )
        )
        if est.theta <= cfg.tol:
            stopped = True
            break
        if step == cfg.max_steps - 1:
            break
        if cfg.mode == "uniform":
            mesh = sol.fine
        else:
            marked = doerfler_mark(est.element_sq, cfg.delta)
            marking.append(marking_stats(mesh, marked, dec, step))
            mesh = refine_adaptive(mesh, marked)

    extrap = _study_extrapolation(records)
    for r in records:
        r.backfill_errors(extrap.value)
    return StudyResult(
        config=cfg,
        records=records,
        extrapolation=extrap,
        meshes=meshes,
        diagnostics=diagnostics,
        marking=marking,
        stopped_by_tol=stopped,
    )
