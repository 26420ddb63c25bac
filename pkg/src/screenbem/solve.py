"""Direct solves and the coupled coarse/fine (h, h/2) solve.

The coarse matrix is the exact Galerkin restriction P^T A_f P of the
fine matrix, so the orthogonality relation a(u_{h/2} - P u_h, P w) = 0
holds by construction up to solver roundoff; it is still measured and
reported for every solve.
"""

from __future__ import annotations

import os
import tempfile
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from .assembly import (
    PairCache,
    SystemBlocks,
    assemble_system,
    build_dofmap,
    combine_system,
)
from .mesh import Mesh, refine_uniform
from .quad import ACCURATE, QuadConfig

__all__ = [
    "PairSolution",
    "SingularSystemError",
    "SolveStats",
    "export_solution",
    "prolongation",
    "solve_dense",
    "solve_pair",
]

# above this size the matrix is spilled to disk during factorization so
# only one dense copy lives in memory
_SPILL_N = 12000


class SingularSystemError(RuntimeError):
    """LU factorization hit an exactly zero pivot."""


@dataclass(frozen=True)
class SolveStats:
    """Diagnostics of one dense solve."""

    residual: float  # ||b - A x|| / (||A||_F ||x|| + ||b||)
    rcond: float  # LAPACK reciprocal condition estimate (1-norm)
    anorm: float  # Frobenius norm of A


def _factor(a: np.ndarray, overwrite: bool = True):
    lu, piv, info = lapack.dgetrf(a, overwrite_a=overwrite)
    if info > 0:
        raise SingularSystemError(
            f"matrix is singular: zero pivot at index {info - 1}"
        )
    if info < 0:
        raise ValueError(f"illegal LAPACK argument {-info}")
    return lu, piv


def solve_dense(
    A: np.ndarray, b: np.ndarray, overwrite: bool = False
) -> tuple[np.ndarray, SolveStats, np.ndarray]:
    """LU solve with partial pivoting; returns (x, stats, residual vector).

    With ``overwrite=True`` the matrix is factored in place and the
    residual is evaluated against a temporary on-disk copy, so peak
    memory stays at one dense matrix.  Otherwise A is left untouched.
    """
    A = np.asarray(A)
    b = np.asarray(b, dtype=float)
    n = len(b)
    if A.shape != (n, n):
        raise ValueError(f"shape mismatch: A {A.shape} vs b ({n},)")
    anorm_f = float(np.linalg.norm(A))

    if overwrite:
        # 1-norm of the factored matrix A^T = max row sum of A
        anorm_1 = float(np.abs(A).sum(axis=1).max())
        tmp = tempfile.NamedTemporaryFile(
            suffix=".npy", prefix="screenbem_A_", delete=False
        )
        tmp.close()
        try:
            np.save(tmp.name, A)
            # A.T is the Fortran-order view of A, factored in place
            lu, piv = _factor(A.T)
            x, info = lapack.dgetrs(lu, piv, b, trans=1)
            if info != 0:
                raise ValueError(f"illegal LAPACK argument {-info}")
            mm = np.load(tmp.name, mmap_mode="r")
            r = b.copy()
            step = 2048
            for i0 in range(0, n, step):
                i1 = min(i0 + step, n)
                r[i0:i1] -= np.asarray(mm[i0:i1]) @ x
            del mm
        finally:
            os.unlink(tmp.name)
    else:
        anorm_1 = float(np.abs(A).sum(axis=0).max())
        lu, piv = _factor(A, overwrite=False)
        x, info = lapack.dgetrs(lu, piv, b)
        if info != 0:
            raise ValueError(f"illegal LAPACK argument {-info}")
        r = b - A @ x

    rcond, info = lapack.dgecon(lu, anorm_1, norm="1")
    residual = float(np.linalg.norm(r)) / (
        anorm_f * float(np.linalg.norm(x)) + float(np.linalg.norm(b))
    )
    return x, SolveStats(residual=residual, rcond=float(rcond), anorm=anorm_f), r


def prolongation(coarse: Mesh, fine: Mesh, dofs_c, dofs_f) -> sp.csr_matrix:
    """P1 embedding of the coarse space into its uniform refinement.

    Carried vertices copy their coefficient, edge midpoints average
    their two parents (excluded parents contribute their boundary value
    zero).  Raises if the genealogy does not link the two meshes.
    """
    nc = coarse.num_vertices
    vp = fine.vertex_parents
    if len(vp) < nc or (vp[:nc] != np.arange(nc)[:, None]).any():
        raise ValueError("fine mesh genealogy does not match the coarse mesh")
    if len(vp) and vp.max() >= nc:
        raise ValueError("vertex parents reference unknown coarse vertices")
    rows, cols, vals = [], [], []
    for v in range(fine.num_vertices):
        i = dofs_f.vertex_dof[v]
        if i < 0:
            continue
        a, b = vp[v]
        if a == b:
            j = dofs_c.vertex_dof[a]
            if j >= 0:
                rows.append(i)
                cols.append(j)
                vals.append(1.0)
        else:
            for parent in (a, b):
                j = dofs_c.vertex_dof[parent]
                if j >= 0:
                    rows.append(i)
                    cols.append(j)
                    vals.append(0.5)
    return sp.csr_matrix(
        (vals, (rows, cols)), shape=(dofs_f.ndof, dofs_c.ndof)
    )


@dataclass
class PairSolution:
    """Solutions on a mesh and its uniform refinement."""

    coarse: Mesh
    fine: Mesh
    blocks: SystemBlocks  # fine-mesh blocks (vcurl consumed)
    dofs_coarse: object
    prolong: sp.csr_matrix
    u_coarse: np.ndarray
    u_fine: np.ndarray
    stats_coarse: SolveStats
    stats_fine: SolveStats
    orthogonality: float  # max |a(u_f - P u_c, P w)| / (||A||_F ||u_f||)
    nu: float
    seconds_assembly: float = 0.0
    seconds_solve: float = 0.0


def solve_pair(
    coarse: Mesh,
    nu: float,
    cfg: QuadConfig = ACCURATE,
    cache: PairCache | None = None,
    f=None,
) -> PairSolution:
    """Assemble on the refinement of ``coarse``, restrict, solve both.

    Only the fine system is integrated; the coarse matrix is its exact
    Galerkin restriction through the prolongation, which makes the h-h/2
    estimator's orthogonality assumption hold to solver precision.
    """
    t0 = time.perf_counter()
    fine = refine_uniform(coarse)
    blocks = assemble_system(fine, cfg, cache, f)
    t1 = time.perf_counter()
    dofs_c = build_dofmap(coarse)
    P = prolongation(coarse, fine, dofs_c, blocks.dofs)
    A_f, b_f = combine_system(blocks, nu, copy=False)
    blocks.vcurl = None  # consumed by the in-place combination

    T1 = P.T @ A_f  # (nc, nf)
    A_c = T1 @ P
    A_c = A_c.toarray() if sp.issparse(A_c) else np.asarray(A_c)
    del T1
    b_c = P.T @ b_f

    u_c, stats_c, r_c = solve_dense(A_c, b_c)
    big = len(b_f) >= _SPILL_N
    u_f, stats_f, r_f = solve_dense(A_f, b_f, overwrite=big)
    orth_vec = r_c - P.T @ r_f
    denom = stats_f.anorm * float(np.linalg.norm(u_f))
    orth = float(np.abs(orth_vec).max()) / denom if denom > 0 else 0.0
    t2 = time.perf_counter()
    return PairSolution(
        coarse=coarse,
        fine=fine,
        blocks=blocks,
        dofs_coarse=dofs_c,
        prolong=P,
        u_coarse=u_c,
        u_fine=u_f,
        stats_coarse=stats_c,
        stats_fine=stats_f,
        orthogonality=orth,
        nu=nu,
        seconds_assembly=t1 - t0,
        seconds_solve=t2 - t1,
    )


def export_solution(path, mesh: Mesh, dofs, u: np.ndarray) -> None:
    """Plain-text coefficients: "dof vertex x y value" per line."""
    with open(path, "w") as fh:
        for i, v in enumerate(dofs.dof_vertex):
            x, y = mesh.vertices[v]
            fh.write(f"{i} {v} {x:.17g} {y:.17g} {u[i]:.17g}\n")
