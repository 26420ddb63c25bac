"""Quadrature rules and singular integration kernels.

Everything here works on flat triangles in the plane z = 0.  The single
layer kernel 1/(4 pi |x - y|) of the 3D Laplacian is integrated with a
semi-analytic strategy: the inner integral (the Newton potential of a
constant density over a triangle) has a per-edge closed form, the outer
integral is done with positive-weight Gauss rules whose layout depends on
how the two triangles sit relative to each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

__all__ = [
    "ACCURATE",
    "FAST",
    "FOUR_PI",
    "MAX_SEGMENT_ORDER",
    "MAX_TRIANGLE_ORDER",
    "PROFILES",
    "PairClass",
    "QuadConfig",
    "QuadratureError",
    "QuadratureRule",
    "UnsupportedOrderError",
    "classify_pair",
    "edge_potential_integral",
    "newton_potential_batch",
    "newton_potential_triangle",
    "pair_potential",
    "quadrature_rule",
    "tri_diameter",
]

FOUR_PI = 4.0 * math.pi

MAX_SEGMENT_ORDER = 21
MAX_TRIANGLE_ORDER = 10


class QuadratureError(RuntimeError):
    """Internal refinement failed to meet its tolerance."""


class UnsupportedOrderError(ValueError):
    """Requested exactness degree outside the supported range."""


class PairClass(str, Enum):
    IDENTICAL = "identical"
    EDGE_ADJACENT = "edge-adjacent"
    VERTEX_ADJACENT = "vertex-adjacent"
    DISJOINT_NEAR = "disjoint-near"
    DISJOINT_FAR = "disjoint-far"


@dataclass(frozen=True)
class QuadConfig:
    """Orders and subdivision depths per pair class.

    ``rel_tol`` is the internal self-consistency target for the checked
    classes (identical, edge- and vertex-adjacent, near); refinement
    escalates up to ``max_depth`` before giving up.  Far pairs use a
    single unchecked rule; ``near_ratio`` is chosen so that its relative
    error at the classification boundary stays near ``rel_tol``.
    """

    far_order: int = 4
    near_order: int = 7
    vertex_order: int = 10
    self_order: int = 7
    self_depth: int = 3
    near_ratio: float = 1.25
    rel_tol: float = 5.0e-7
    max_depth: int = 6
    edge_order: int = 10
    edge_depth: int = 14
    geom_tol: float = 1.0e-10


FAST = QuadConfig(
    far_order=2,
    near_order=5,
    vertex_order=7,
    self_order=5,
    self_depth=2,
    near_ratio=2.0,
    rel_tol=1.0e-4,
    edge_order=6,
    edge_depth=8,
)

ACCURATE = QuadConfig()

PROFILES = {"fast": FAST, "accurate": ACCURATE}


@dataclass(frozen=True)
class QuadratureRule:
    kind: str  # "segment" | "triangle"
    order: int
    points: np.ndarray  # barycentric (n, 3) for triangles, (n,) in [0,1] else
    weights: np.ndarray


# --- positive rules -------------------------------------------------------

_TRI_DEG2 = (
    np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
    np.full(3, 1 / 6),
)

# 6-point degree-4 rule (two symmetric orbits, all weights positive)
_a1, _a2 = 0.445948490915965, 0.091576213509771
_w1, _w2 = 0.223381589678011, 0.109951743655322
_TRI_DEG4 = (
    np.array(
        [
            [1 - 2 * _a1, _a1, _a1],
            [_a1, 1 - 2 * _a1, _a1],
            [_a1, _a1, 1 - 2 * _a1],
            [1 - 2 * _a2, _a2, _a2],
            [_a2, 1 - 2 * _a2, _a2],
            [_a2, _a2, 1 - 2 * _a2],
        ]
    ),
    np.array([_w1, _w1, _w1, _w2, _w2, _w2]) / 2.0,
)

# 7-point degree-5 rule (centroid plus two orbits)
_b1, _b2 = 0.470142064105115, 0.101286507323456
_v1, _v2 = 0.132394152788506, 0.125939180544827
_TRI_DEG5 = (
    np.array(
        [
            [1 / 3, 1 / 3, 1 / 3],
            [1 - 2 * _b1, _b1, _b1],
            [_b1, 1 - 2 * _b1, _b1],
            [_b1, _b1, 1 - 2 * _b1],
            [1 - 2 * _b2, _b2, _b2],
            [_b2, 1 - 2 * _b2, _b2],
            [_b2, _b2, 1 - 2 * _b2],
        ]
    ),
    np.array([0.225, _v1, _v1, _v1, _v2, _v2, _v2]) / 2.0,
)


def _conical_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n x n conical product rule, exact to degree 2n - 1, positive weights."""
    xg, wg = leggauss(n)
    xi = 0.5 * (xg + 1.0)
    wi = 0.5 * wg
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    eta = 0.5 * (xj + 1.0)
    wj = 0.25 * wj
    pts = []
    wts = []
    for j in range(n):
        for i in range(n):
            x = xi[i] * (1.0 - eta[j])
            y = eta[j]
            pts.append([1.0 - x - y, x, y])
            wts.append(wi[i] * wj[j])
    return np.array(pts), np.array(wts)


@lru_cache(maxsize=None)
def _triangle_rule_data(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order <= 1:
        return np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([0.5])
    if order == 2:
        return _TRI_DEG2
    if order in (3, 4):
        return _TRI_DEG4
    if order == 5:
        return _TRI_DEG5
    n = order // 2 + 1  # conical n x n is exact to 2n - 1
    return _conical_rule(n)


@lru_cache(maxsize=None)
def _segment_rule_data(order: int) -> tuple[np.ndarray, np.ndarray]:
    n = max(1, (order + 2) // 2)
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def quadrature_rule(kind: str, order: int) -> QuadratureRule:
    """Positive rule on the reference segment [0,1] or reference triangle.

    ``order`` is the polynomial exactness degree.  Segment rules are
    Gauss-Legendre (weights sum to 1), triangle rules are symmetric or
    conical-product rules (weights sum to the reference area 1/2).
    """
    if order < 1:
        raise UnsupportedOrderError(f"order must be >= 1, got {order}")
    if kind == "segment":
        if order > MAX_SEGMENT_ORDER:
            raise UnsupportedOrderError(
                f"segment rules supported up to degree {MAX_SEGMENT_ORDER}"
            )
        pts, wts = _segment_rule_data(order)
    elif kind == "triangle":
        if order > MAX_TRIANGLE_ORDER:
            raise UnsupportedOrderError(
                f"triangle rules supported up to degree {MAX_TRIANGLE_ORDER}"
            )
        pts, wts = _triangle_rule_data(order)
    else:
        raise ValueError(f"unknown rule kind {kind!r}")
    return QuadratureRule(kind, order, pts.copy(), wts.copy())


# --- Newton potential of a constant density over a triangle ----------------


def newton_potential_batch(v0, v1, v2, x):
    """1/(4 pi) * integral over the triangle (v0,v1,v2) of 1/|x - y| dy.

    All arguments broadcast: v* have trailing shape (..., 2), x has
    trailing shape (..., 2).  The evaluation point must lie in the plane
    of the triangle.  The flux form yields the negated value for
    clockwise input, so the magnitude is returned; the integral of a
    positive kernel is positive either way.
    """
    v0 = np.asarray(v0, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    x = np.asarray(x, dtype=float)
    acc = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        for a, b in ((v0, v1), (v1, v2), (v2, v0)):
            ex = b[..., 0] - a[..., 0]
            ey = b[..., 1] - a[..., 1]
            L = np.hypot(ex, ey)
            tx = ex / L
            ty = ey / L
            wx = a[..., 0] - x[..., 0]
            wy = a[..., 1] - x[..., 1]
            # outward normal of a CCW polygon edge is (ty, -tx)
            d = ty * wx - tx * wy
            ta = tx * wx + ty * wy
            tb = ta + L
            ra = np.sqrt(d * d + ta * ta)
            rb = np.sqrt(d * d + tb * tb)
            num = np.where(tb > 0.0, tb + rb, (d * d) / (rb - tb))
            den = np.where(ta > 0.0, ta + ra, (d * d) / (ra - ta))
            term = d * np.log(num / den)
            acc = acc + np.where(d != 0.0, np.nan_to_num(term, nan=0.0), 0.0)
    return np.abs(acc) / FOUR_PI


def newton_potential_triangle(tri, x) -> float:
    """Scalar wrapper around :func:`newton_potential_batch`."""
    tri = np.asarray(tri, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(newton_potential_batch(tri[0], tri[1], tri[2], x))


# --- geometric classification ----------------------------------------------


def _seg_seg_distance(p, q, r, s) -> float:
    """Distance between segments [p,q] and [r,s] in the plane."""
    p, q, r, s = (np.asarray(v, dtype=float) for v in (p, q, r, s))

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    o1, o2 = orient(p, q, r), orient(p, q, s)
    o3, o4 = orient(r, s, p), orient(r, s, q)
    if (o1 > 0) != (o2 > 0) and (o3 > 0) != (o4 > 0):
        return 0.0  # proper crossing; touching cases fall through to 0 below

    def point_seg(a, b, c):
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0.0 else float(np.clip((c - a) @ ab / denom, 0.0, 1.0))
        return float(np.hypot(*(a + t * ab - c)))

    return min(
        point_seg(p, q, r),
        point_seg(p, q, s),
        point_seg(r, s, p),
        point_seg(r, s, q),
    )


def _tri_tri_distance(ta, tb) -> float:
    best = math.inf
    for i in range(3):
        for j in range(3):
            best = min(
                best,
                _seg_seg_distance(ta[i], ta[(i + 1) % 3], tb[j], tb[(j + 1) % 3]),
            )
    return best


def _edge_overlap_length(p, q, r, s, tol) -> float:
    """Length of the common collinear portion of [p,q] and [r,s] (0 if none)."""
    d1 = q - p
    L1 = float(np.hypot(*d1))
    if L1 == 0.0:
        return 0.0
    u = d1 / L1
    n = np.array([-u[1], u[0]])
    if abs(float((r - p) @ n)) > tol or abs(float((s - p) @ n)) > tol:
        return 0.0
    a, b = 0.0, L1
    c, d = float((r - p) @ u), float((s - p) @ u)
    lo, hi = max(a, min(c, d)), min(b, max(c, d))
    return max(0.0, hi - lo)


def tri_diameter(tri) -> float:
    tri = np.asarray(tri, dtype=float)
    return max(
        float(np.hypot(*(tri[1] - tri[0]))),
        float(np.hypot(*(tri[2] - tri[1]))),
        float(np.hypot(*(tri[0] - tri[2]))),
    )


def classify_pair(ta, tb, cfg: QuadConfig = ACCURATE) -> tuple[PairClass, float]:
    """Classify a triangle pair and return (class, separation ratio).

    The ratio is dist(T, T') / max(h_T, h_T'); it is 0 for touching pairs
    and by convention 0 for identical ones.  Contact is judged
    geometrically so that triangles from different sub-domain meshes that
    touch along the skeleton without sharing vertices are still treated
    as adjacent.
    """
    ta = np.asarray(ta, dtype=float)
    tb = np.asarray(tb, dtype=float)
    h = max(tri_diameter(ta), tri_diameter(tb))
    tol = cfg.geom_tol * h
    same = all(
        any(np.hypot(*(ta[i] - tb[j])) <= tol for j in range(3)) for i in range(3)
    )
    if same:
        return PairClass.IDENTICAL, 0.0
    dist = _tri_tri_distance(ta, tb)
    if dist > tol:
        return (
            PairClass.DISJOINT_NEAR
            if dist / h < cfg.near_ratio
            else PairClass.DISJOINT_FAR,
            dist / h,
        )
    overlap = 0.0
    for i in range(3):
        for j in range(3):
            overlap = max(
                overlap,
                _edge_overlap_length(
                    ta[i], ta[(i + 1) % 3], tb[j], tb[(j + 1) % 3], tol
                ),
            )
    if overlap > tol:
        return PairClass.EDGE_ADJACENT, 0.0
    return PairClass.VERTEX_ADJACENT, 0.0


# --- double integrals over triangle pairs -----------------------------------


def _red_children(tris: np.ndarray) -> np.ndarray:
    """Red subdivision of an array of triangles, shape (n,3,2) -> (4n,3,2)."""
    v0, v1, v2 = tris[:, 0], tris[:, 1], tris[:, 2]
    m01 = 0.5 * (v0 + v1)
    m12 = 0.5 * (v1 + v2)
    m20 = 0.5 * (v2 + v0)
    out = np.empty((4 * len(tris), 3, 2))
    out[0::4] = np.stack([v0, m01, m20], axis=1)
    out[1::4] = np.stack([v1, m12, m01], axis=1)
    out[2::4] = np.stack([v2, m20, m12], axis=1)
    out[3::4] = np.stack([m01, m12, m20], axis=1)
    return out


def _subdivide(tri: np.ndarray, depth: int) -> np.ndarray:
    cells = tri[None, :, :]
    for _ in range(depth):
        cells = _red_children(cells)
    return cells


def _tri_area(tri: np.ndarray) -> float:
    return 0.5 * abs(
        float(
            (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
            - (tri[1, 1] - tri[0, 1]) * (tri[2, 0] - tri[0, 0])
        )
    )


def _outer_composite(outer: np.ndarray, inner: np.ndarray, depth: int, order: int) -> float:
    """Integrate the Newton potential of ``inner`` over ``outer`` with a
    composite rule on a uniform 4-way subdivision of ``outer``."""
    bary, wts = _triangle_rule_data(order)
    cells = _subdivide(outer, depth)
    pts = np.einsum("qk,ckd->cqd", bary, cells)
    vals = newton_potential_batch(
        inner[0], inner[1], inner[2], pts.reshape(-1, 2)
    ).reshape(pts.shape[:2])
    cell_area2 = 2.0 * _tri_area(outer) / (4.0**depth)
    return float(cell_area2 * (vals @ wts).sum())


def _graded_vertex_cells(outer: np.ndarray, corner: int, extra: int) -> np.ndarray:
    """One red split plus ``extra`` further splits of the child at ``corner``."""
    cells = _red_children(outer[None, :, :])
    # child k of the fixed red layout carries corner k of the parent
    graded = [np.delete(cells, corner, axis=0)]
    hot = cells[corner : corner + 1]
    for _ in range(extra):
        kids = _red_children(hot)
        graded.append(kids[[k for k in range(4) if k != corner]])
        hot = kids[corner : corner + 1]
    graded.append(hot)
    return np.concatenate(graded, axis=0)


def _outer_cells_value(
    cells: np.ndarray, inner: np.ndarray, order: int
) -> float:
    bary, wts = _triangle_rule_data(order)
    pts = np.einsum("qk,ckd->cqd", bary, cells)
    vals = newton_potential_batch(
        inner[0], inner[1], inner[2], pts.reshape(-1, 2)
    ).reshape(pts.shape[:2])
    areas2 = 2.0 * np.abs(
        (cells[:, 1, 0] - cells[:, 0, 0]) * (cells[:, 2, 1] - cells[:, 0, 1])
        - (cells[:, 1, 1] - cells[:, 0, 1]) * (cells[:, 2, 0] - cells[:, 0, 0])
    ) * 0.5
    return float(areas2 @ (vals @ wts))


def _canonical_tri(t: np.ndarray) -> np.ndarray:
    # lexicographically smallest vertex first, counter-clockwise
    t = t[np.lexsort((t[:, 1], t[:, 0]))]
    e1, e2 = t[1] - t[0], t[2] - t[0]
    if e1[0] * e2[1] - e1[1] * e2[0] < 0.0:
        t = t[[0, 2, 1]]
    return t


def _canonical_pair(ta: np.ndarray, tb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ta = _canonical_tri(ta)
    tb = _canonical_tri(tb)
    ka = tuple(map(tuple, ta.tolist()))
    kb = tuple(map(tuple, tb.tolist()))
    return (ta, tb) if ka <= kb else (tb, ta)


def pair_potential(
    ta,
    tb,
    cfg: QuadConfig = ACCURATE,
    pair_class: PairClass | None = None,
) -> float:
    """G(T, T') = 1/(4 pi) * double integral of 1/|x - y| over T x T'.

    The inner integral is the closed-form Newton potential; the outer one
    uses a class-dependent rule.  Checked classes compare two refinement
    levels and escalate the outer subdivision until ``cfg.rel_tol`` is
    met, raising :class:`QuadratureError` past ``cfg.max_depth``.  The
    arguments are reordered canonically so the result is exactly
    symmetric in (T, T').
    """
    ta = np.asarray(ta, dtype=float)
    tb = np.asarray(tb, dtype=float)
    if pair_class is None:
        pair_class, _ = classify_pair(ta, tb, cfg)
    outer, inner = _canonical_pair(ta, tb)

    if pair_class is PairClass.DISJOINT_FAR:
        coarse = _outer_composite(outer, inner, 0, cfg.far_order)
        fine = _outer_composite(outer, inner, 0, cfg.near_order)
        if abs(fine - coarse) <= cfg.rel_tol * max(abs(fine), 1e-300):
            return fine
        return _escalate(outer, inner, 1, cfg.near_order, cfg, prev=fine)

    if pair_class is PairClass.DISJOINT_NEAR:
        coarse = _outer_composite(outer, inner, 0, cfg.near_order)
        fine = _outer_composite(outer, inner, 0, min(cfg.near_order + 3, 10))
        if abs(fine - coarse) <= cfg.rel_tol * max(abs(fine), 1e-300):
            return fine
        return _escalate(outer, inner, 1, cfg.near_order, cfg, prev=coarse)

    if pair_class is PairClass.VERTEX_ADJACENT:
        corner = _shared_corner(outer, inner, cfg)
        val1 = _outer_cells_value(
            _graded_vertex_cells(outer, corner, 0), inner, cfg.vertex_order
        )
        val2 = _outer_cells_value(
            _graded_vertex_cells(outer, corner, 2), inner, cfg.vertex_order
        )
        if abs(val2 - val1) <= cfg.rel_tol * max(abs(val2), 1e-300):
            return val1
        prev = val2
        for extra in range(4, 2 * cfg.max_depth, 2):
            cur = _outer_cells_value(
                _graded_vertex_cells(outer, corner, extra), inner, cfg.vertex_order
            )
            if abs(cur - prev) <= cfg.rel_tol * max(abs(cur), 1e-300):
                return cur
            prev = cur
        raise QuadratureError("vertex-adjacent pair did not meet tolerance")

    # identical and edge-adjacent: uniform outer subdivision has a clean
    # geometric error tail (factor 1/4 per level), so two consecutive
    # depths give a Richardson extrapolant far more accurate than the
    # finer depth alone.  A third, coarser depth verifies the ratio is
    # actually geometric before the extrapolant is trusted.
    depth = max(cfg.self_depth, 2)
    window = [
        _outer_composite(outer, inner, d, cfg.self_order)
        for d in (depth - 2, depth - 1, depth)
    ]
    while True:
        v0, v1, v2 = window[-3:]
        if v2 == v1:
            return v2
        if v1 != v0:
            q = (v2 - v1) / (v1 - v0)
            if 0.15 <= abs(q) <= 0.4:
                return v2 + (v2 - v1) / 3.0
        depth += 1
        if depth > cfg.max_depth:
            raise QuadratureError(
                f"subdivision tail not geometric by depth {cfg.max_depth}"
            )
        window.append(_outer_composite(outer, inner, depth, cfg.self_order))


def _escalate(outer, inner, start_depth, order, cfg, prev=None) -> float:
    if prev is None:
        prev = _outer_composite(outer, inner, start_depth - 1, order)
    for depth in range(start_depth, cfg.max_depth + 1):
        cur = _outer_composite(outer, inner, depth, order)
        if abs(cur - prev) <= cfg.rel_tol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    raise QuadratureError(
        f"pair integral did not reach rel_tol={cfg.rel_tol} by depth {cfg.max_depth}"
    )


def _shared_corner(outer: np.ndarray, inner: np.ndarray, cfg: QuadConfig) -> int:
    h = max(tri_diameter(outer), tri_diameter(inner))
    tol = cfg.geom_tol * h
    best, bestd = 0, math.inf
    for i in range(3):
        for j in range(3):
            d = float(np.hypot(*(outer[i] - inner[j])))
            if d < bestd:
                best, bestd = i, d
    if bestd > tol:
        # point contact may be vertex-on-edge; grade toward the closest corner
        for i in range(3):
            d = _point_tri_distance(outer[i], inner)
            if d <= tol:
                return i
    return best


def _point_tri_distance(p, tri) -> float:
    best = math.inf
    for j in range(3):
        a, b = tri[j], tri[(j + 1) % 3]
        ab = b - a
        t = float(np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0))
        best = min(best, float(np.hypot(*(a + t * ab - p))))
    sign1 = (tri[1, 0] - tri[0, 0]) * (p[1] - tri[0, 1]) - (tri[1, 1] - tri[0, 1]) * (
        p[0] - tri[0, 0]
    )
    sign2 = (tri[2, 0] - tri[1, 0]) * (p[1] - tri[1, 1]) - (tri[2, 1] - tri[1, 1]) * (
        p[0] - tri[1, 0]
    )
    sign3 = (tri[0, 0] - tri[2, 0]) * (p[1] - tri[2, 1]) - (tri[0, 1] - tri[2, 1]) * (
        p[0] - tri[2, 0]
    )
    if (sign1 >= 0 and sign2 >= 0 and sign3 >= 0) or (
        sign1 <= 0 and sign2 <= 0 and sign3 <= 0
    ):
        return 0.0
    return best


# --- line integrals of the Newton potential ---------------------------------


def edge_potential_integral(e, tri, p, cfg: QuadConfig = ACCURATE) -> float:
    """Integral over the segment ``e`` of N_T(x) * p(x) ds.

    ``e`` is a (2, 2) array of endpoints, ``p`` the values of an affine
    weight at those endpoints, N_T the Newton potential of a constant
    unit density over ``tri``.  When ``e`` touches the closed triangle
    the rule is dyadically graded toward the touching endpoints;
    otherwise plain composite Gauss is used.  Either way the result is
    certified to 1e-8 relative self-consistency.
    """
    e = np.asarray(e, dtype=float)
    tri = np.asarray(tri, dtype=float)
    p = np.asarray(p, dtype=float)
    length = float(np.hypot(*(e[1] - e[0])))
    if length == 0.0 or (p[0] == 0.0 and p[1] == 0.0):
        return 0.0
    tol = cfg.geom_tol * max(length, tri_diameter(tri))
    touch0 = _point_tri_distance(e[0], tri) <= tol
    touch1 = _point_tri_distance(e[1], tri) <= tol

    def value(splits: np.ndarray) -> float:
        # splits: increasing breakpoints in [0, 1] defining the pieces
        xq, wq = _segment_rule_data(2 * cfg.edge_order - 1)
        s0 = splits[:-1]
        ds = np.diff(splits)
        s = s0[:, None] + ds[:, None] * xq[None, :]
        pts = e[0][None, None, :] + s[..., None] * (e[1] - e[0])[None, None, :]
        vals = newton_potential_batch(
            tri[0], tri[1], tri[2], pts.reshape(-1, 2)
        ).reshape(s.shape)
        weight = p[0] + (p[1] - p[0]) * s
        return float(length * ((vals * weight) @ wq @ ds))

    def graded_splits(depth: int) -> np.ndarray:
        pieces = [0.0, 1.0]
        if touch0:
            pieces.extend(0.5 ** np.arange(1, depth + 1))
        if touch1:
            pieces.extend(1.0 - 0.5 ** np.arange(1, depth + 1))
        if not (touch0 or touch1):
            pieces.extend([0.25, 0.5, 0.75])
        return np.unique(np.array(pieces))

    if touch0 or touch1:
        prev = value(graded_splits(cfg.edge_depth))
        for depth in range(cfg.edge_depth + 2, 36, 2):
            cur = value(graded_splits(depth))
            if abs(cur - prev) <= 1.0e-8 * max(abs(cur), 1e-300):
                return cur
            prev = cur
        raise QuadratureError("edge potential integral did not converge")

    prev = value(graded_splits(0))
    splits = np.linspace(0.0, 1.0, 9)
    for _ in range(4):
        cur = value(splits)
        if abs(cur - prev) <= 1.0e-8 * max(abs(cur), 1e-300):
            return cur
        prev = cur
        splits = np.linspace(0.0, 1.0, 2 * (len(splits) - 1) + 1)
    raise QuadratureError("edge potential integral did not converge")
