"""Sub-domain decomposition and per-sub-domain triangulations.

Meshes are conforming within each sub-domain; meshes of distinct
sub-domains are independent (interface vertices are duplicated per
side) and need not match across interfaces.  Triangles are stored
peak-first: the refinement edge for newest-vertex bisection is always
the local edge (1, 2), opposite vertex 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import MultiPolygon, Point, Polygon
from shapely.ops import unary_union

__all__ = [
    "Decomposition",
    "DecompositionError",
    "Interface",
    "Mesh",
    "MeshError",
    "build_decomposition",
    "export_mesh",
    "generate_initial_mesh",
    "min_interior_angle",
    "refine_adaptive",
    "refine_uniform",
]

GEOM_REL_TOL = 1e-10


class DecompositionError(ValueError):
    """Invalid sub-domain layout (overlap, gap, or bad interface)."""


class MeshError(ValueError):
    """Mesh construction or refinement contract violation."""


@dataclass(frozen=True)
class Interface:
    """One skeleton segment, oriented from its lexicographically smaller
    endpoint ``a`` to the larger ``b``.

    ``left``/``right`` are the sub-domain indices on the geometric left
    and right of the oriented segment; the jump convention is
    [v] = v_left - v_right, which together with this tangent makes the
    coupling terms consistent.  ``pair`` is the sorted (i, j) index pair
    kept for identification.
    """

    a: np.ndarray
    b: np.ndarray
    left: int
    right: int

    @property
    def pair(self) -> tuple[int, int]:
        return (min(self.left, self.right), max(self.left, self.right))

    @property
    def length(self) -> float:
        return float(np.hypot(*(self.b - self.a)))

    @property
    def tangent(self) -> np.ndarray:
        return (self.b - self.a) / self.length

    def point(self, s) -> np.ndarray:
        """Arclength parametrization, s in [0, length]."""
        s = np.asarray(s, dtype=float)
        return self.a + s[..., None] * self.tangent


@dataclass(frozen=True)
class Decomposition:
    """Polygonal sub-domains Γ_1..Γ_K with their interface segments.

    ``exterior_edges`` lists, per sub-domain, the boundary segments on
    the exterior boundary of the screen (polygon edges minus interface
    portions); vertices there carry the homogeneous condition.
    """

    subdomains: tuple[np.ndarray, ...]
    interfaces: tuple[Interface, ...]
    exterior_edges: tuple[tuple[np.ndarray, np.ndarray], ...]

    @property
    def K(self) -> int:
        return len(self.subdomains)

    @property
    def L(self) -> int:
        return len(self.interfaces)

    @property
    def scale(self) -> float:
        lo = min(float(p.min()) for p in self.subdomains)
        hi = max(float(p.max()) for p in self.subdomains)
        return hi - lo


FOUR_SQUARE = [
    [(-0.5, -0.5), (0.0, -0.5), (0.0, 0.0), (-0.5, 0.0)],
    [(0.0, -0.5), (0.5, -0.5), (0.5, 0.0), (0.0, 0.0)],
    [(-0.5, 0.0), (0.0, 0.0), (0.0, 0.5), (-0.5, 0.5)],
    [(0.0, 0.0), (0.5, 0.0), (0.5, 0.5), (0.0, 0.5)],
]
SINGLE_SQUARE = [[(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]]
TWO_SQUARE = [
    [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)],
    [(1.0, 0.0), (2.0, 0.0), (2.0, 1.0), (1.0, 1.0)],
]

NAMED_DECOMPOSITIONS = {
    "four-square": FOUR_SQUARE,
    "single": SINGLE_SQUARE,
    "two-square": TWO_SQUARE,
}


def _as_polygons(layout) -> list[np.ndarray]:
    if isinstance(layout, str):
        if layout in NAMED_DECOMPOSITIONS:
            layout = NAMED_DECOMPOSITIONS[layout]
        elif layout.startswith("file="):
            layout = _read_polygon_file(layout[5:])
        else:
            raise DecompositionError(f"unknown decomposition {layout!r}")
    polys = [np.asarray(p, dtype=float) for p in layout]
    for k, p in enumerate(polys):
        if p.ndim != 2 or p.shape[1] != 2 or len(p) < 3:
            raise DecompositionError(f"sub-domain {k} is not a polygon")
    return polys


def _read_polygon_file(path: str) -> list[list[tuple[float, float]]]:
    polys = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            nums = [float(tok) for tok in line.replace(",", " ").split()]
            if len(nums) < 6 or len(nums) % 2:
                raise DecompositionError(f"bad polygon line in {path}: {line!r}")
            polys.append(list(zip(nums[0::2], nums[1::2])))
    if not polys:
        raise DecompositionError(f"no polygons in {path}")
    return polys


def _signed_area(p: np.ndarray) -> float:
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _edge_interval_on_segment(p, q, a, t, length, tol):
    """Arclength interval of edge (p, q) on segment (a, a + length*t), or None."""
    sp = float(np.dot(p - a, t))
    sq = float(np.dot(q - a, t))
    for point, s in ((p, sp), (q, sq)):
        off = point - (a + s * t)
        if np.hypot(*off) > tol or s < -tol or s > length + tol:
            return None
    return (min(sp, sq), max(sp, sq))


def build_decomposition(layout) -> Decomposition:
    """Validate a sub-domain layout and derive interfaces and exterior.

    ``layout`` is a named layout ("four-square", "single", "two-square"),
    a "file=<path>" reference (one polygon per line: x y pairs), or an
    explicit list of counterclockwise vertex loops.  Interfaces are the
    maximal shared boundary portions between two sub-domains; each must
    be an entire polygon edge of at least one side.
    """
    polys = _as_polygons(layout)
    shapes = []
    for k, p in enumerate(polys):
        if _signed_area(p) <= 0.0:
            raise DecompositionError(f"sub-domain {k} must be counterclockwise")
        sh = Polygon(p)
        if not sh.is_valid or sh.area <= 0.0:
            raise DecompositionError(f"sub-domain {k} is degenerate")
        shapes.append(sh)

    scale = max(float(np.abs(p).max()) for p in polys)
    tol = GEOM_REL_TOL * max(scale, 1.0)
    union = unary_union(shapes)
    if abs(sum(s.area for s in shapes) - union.area) > tol * scale:
        raise DecompositionError("sub-domain interiors overlap")
    if isinstance(union, MultiPolygon):
        raise DecompositionError("sub-domains do not form a connected screen")
    if union.interiors:
        raise DecompositionError("gap between sub-domains")

    def edges(p):
        return [(p[k], p[(k + 1) % len(p)]) for k in range(len(p))]

    # shared boundary portions, one Interface per maximal shared segment
    interfaces: list[Interface] = []
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            inter = shapes[i].boundary.intersection(shapes[j].boundary)
            if inter.is_empty or inter.length <= tol:
                continue
            for part in getattr(inter, "geoms", [inter]):
                if part.geom_type != "LineString" or part.length <= tol:
                    continue
                coords = np.asarray(part.coords, dtype=float)
                a, b = coords[0], coords[-1]
                if tuple(b) < tuple(a):
                    a, b = b, a
                whole_edge = any(
                    {tuple(np.round(e0 / tol)), tuple(np.round(e1 / tol))}
                    == {tuple(np.round(a / tol)), tuple(np.round(b / tol))}
                    for p in (polys[i], polys[j])
                    for e0, e1 in edges(p)
                )
                if not whole_edge:
                    raise DecompositionError(
                        "interface is a proper subset of both adjacent edges"
                    )
                t = (b - a) / np.hypot(*(b - a))
                probe = 0.5 * (a + b) + 10.0 * tol * np.array([-t[1], t[0]])
                left, right = (
                    (i, j) if shapes[i].contains(Point(probe)) else (j, i)
                )
                interfaces.append(Interface(a=a, b=b, left=left, right=right))

    exterior = _exterior_edges(polys, interfaces, tol)
    return Decomposition(
        subdomains=tuple(p.copy() for p in polys),
        interfaces=tuple(interfaces),
        exterior_edges=tuple(exterior),
    )


def _exterior_edges(polys, interfaces, tol):
    out = []
    for k, p in enumerate(polys):
        for e in range(len(p)):
            e0, e1 = p[e], p[(e + 1) % len(p)]
            elen = float(np.hypot(*(e1 - e0)))
            t = (e1 - e0) / elen
            # subtract interface intervals from this edge
            keep = [(0.0, elen)]
            for itf in interfaces:
                if k not in (itf.left, itf.right):
                    continue
                iv = _edge_interval_on_segment(itf.a, itf.b, e0, t, elen, tol)
                if iv is None:
                    continue
                nxt = []
                for lo, hi in keep:
                    if iv[1] <= lo + tol or iv[0] >= hi - tol:
                        nxt.append((lo, hi))
                        continue
                    if iv[0] > lo + tol:
                        nxt.append((lo, iv[0]))
                    if iv[1] < hi - tol:
                        nxt.append((iv[1], hi))
                keep = nxt
            for lo, hi in keep:
                if hi - lo > tol:
                    out.append((e0 + lo * t, e0 + hi * t))
    return out


@dataclass(frozen=True)
class Mesh:
    """All sub-domain triangulations of one refinement level.

    Vertices are grouped per sub-domain (``vertex_subdomain``); a
    geometric point on an interface appears once per adjacent side.
    ``parent`` holds the element id in the mesh this one was refined
    from (-1 for an initial mesh); ``vertex_parents`` holds, for
    mid-edge vertices, the two endpoint ids in the parent mesh and
    (k, k) for vertex k carried over.
    """

    decomposition: Decomposition
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (ne, 3), counterclockwise, peak first
    subdomain: np.ndarray  # (ne,)
    vertex_subdomain: np.ndarray  # (nv,)
    parent: np.ndarray  # (ne,)
    vertex_parents: np.ndarray  # (nv, 2)

    def __post_init__(self):
        for a in (
            self.vertices,
            self.triangles,
            self.subdomain,
            self.vertex_subdomain,
            self.parent,
            self.vertex_parents,
        ):
            a.setflags(write=False)

    @property
    def num_elements(self) -> int:
        return len(self.triangles)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def element_coords(self) -> np.ndarray:
        """(ne, 3, 2) vertex coordinates per element."""
        return self.vertices[self.triangles]

    def element_areas(self) -> np.ndarray:
        c = self.element_coords()
        e1 = c[:, 1] - c[:, 0]
        e2 = c[:, 2] - c[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def element_diameters(self) -> np.ndarray:
        c = self.element_coords()
        out = np.zeros(len(c))
        for i, j in ((0, 1), (1, 2), (2, 0)):
            out = np.maximum(out, np.hypot(*(c[:, j] - c[:, i]).T))
        return out

    @property
    def h(self) -> float:
        return float(self.element_diameters().max())

    @property
    def h_min(self) -> float:
        return float(self.element_diameters().min())

    def h_subdomain(self) -> np.ndarray:
        """Max element diameter per sub-domain."""
        d = self.element_diameters()
        K = self.decomposition.K
        return np.array(
            [d[self.subdomain == k].max() if (self.subdomain == k).any() else 0.0
             for k in range(K)]
        )


def _is_axis_rectangle(p: np.ndarray, tol: float) -> bool:
    if len(p) != 4:
        return False
    xs, ys = sorted(set(np.round(p[:, 0] / tol))), sorted(set(np.round(p[:, 1] / tol)))
    return len(xs) == 2 and len(ys) == 2


def generate_initial_mesh(d: Decomposition, n0: int) -> Mesh:
    """Structured criss-cross mesh: n0 x n0 cells per sub-domain, each
    split along the diagonal pointing toward the sub-domain center.

    Only axis-aligned rectangular sub-domains are supported by this
    generator.  Refinement edges are the diagonals (longest edges).
    """
    if n0 < 1:
        raise MeshError(f"n0 must be >= 1, got {n0}")
    tol = GEOM_REL_TOL * max(d.scale, 1.0)
    verts: list[np.ndarray] = []
    tris: list[list[int]] = []
    sub_of_tri: list[int] = []
    sub_of_vert: list[int] = []
    for k, poly in enumerate(d.subdomains):
        if not _is_axis_rectangle(poly, tol):
            raise MeshError(
                f"sub-domain {k} is not an axis-aligned rectangle; "
                "the structured generator cannot mesh it"
            )
        x0, y0 = poly.min(axis=0)
        x1, y1 = poly.max(axis=0)
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        base = len(verts)
        nx = ny = n0
        xs = np.linspace(x0, x1, nx + 1)
        ys = np.linspace(y0, y1, ny + 1)
        for yy in ys:
            for xx in xs:
                verts.append(np.array([xx, yy]))
                sub_of_vert.append(k)

        def vid(ix, iy):
            return base + iy * (nx + 1) + ix

        for iy in range(ny):
            for ix in range(nx):
                v00, v10 = vid(ix, iy), vid(ix + 1, iy)
                v01, v11 = vid(ix, iy + 1), vid(ix + 1, iy + 1)
                ccx = 0.5 * (xs[ix] + xs[ix + 1]) - cx
                ccy = 0.5 * (ys[iy] + ys[iy + 1]) - cy
                if ccx * ccy >= 0.0:
                    # main diagonal v00-v11 lies on the line toward the center
                    cells = [(v10, v11, v00), (v01, v00, v11)]
                else:
                    cells = [(v00, v10, v01), (v11, v01, v10)]
                for peak, a, b in cells:
                    tris.append([peak, a, b])
                    sub_of_tri.append(k)

    mesh = Mesh(
        decomposition=d,
        vertices=np.array(verts),
        triangles=np.array(tris, dtype=np.int64),
        subdomain=np.array(sub_of_tri, dtype=np.int64),
        vertex_subdomain=np.array(sub_of_vert, dtype=np.int64),
        parent=np.full(len(tris), -1, dtype=np.int64),
        vertex_parents=np.stack(
            [np.arange(len(verts)), np.arange(len(verts))], axis=1
        ).astype(np.int64),
    )
    _validate_mesh(mesh)
    return mesh


def _peak_first(tri: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Rotate vertex order so the longest edge is the (1, 2) edge.

    Ties are broken toward the smallest starting local index, keeping
    orientation (rotations only).
    """
    lengths = [
        np.hypot(*(coords[tri[(k + 2) % 3]] - coords[tri[(k + 1) % 3]]))
        for k in range(3)
    ]
    peak = int(np.argmax(lengths))
    return np.roll(tri, -peak)


def refine_uniform(m: Mesh) -> Mesh:
    """Red refinement: each triangle split into 4 similar children.

    Parent vertices keep their ids; midpoints are appended with their
    parent endpoint pair recorded, so prolongation of P1 functions is
    exact.  Children are stored peak-first again (longest edge rule).
    """
    nv = m.num_vertices
    verts = [m.vertices]
    vparents = [np.stack([np.arange(nv), np.arange(nv)], axis=1)]
    midpoint: dict[tuple[int, int], int] = {}
    new_pts: list[np.ndarray] = []
    new_par: list[tuple[int, int]] = []

    def mid(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        idx = midpoint.get(key)
        if idx is None:
            idx = nv + len(new_pts)
            midpoint[key] = idx
            new_pts.append(0.5 * (m.vertices[a] + m.vertices[b]))
            new_par.append(key)
        return idx

    tris = []
    parent = []
    sub = []
    for e, (v0, v1, v2) in enumerate(m.triangles):
        m01, m12, m20 = mid(v0, v1), mid(v1, v2), mid(v2, v0)
        for child in (
            (v0, m01, m20),
            (v1, m12, m01),
            (v2, m20, m12),
            (m01, m12, m20),
        ):
            tris.append(child)
            parent.append(e)
            sub.append(m.subdomain[e])

    vertices = np.concatenate([m.vertices, np.array(new_pts)])
    vertex_parents = np.concatenate(
        [vparents[0], np.array(new_par, dtype=np.int64)]
    )
    vsub = np.concatenate(
        [m.vertex_subdomain, m.vertex_subdomain[[p[0] for p in new_par]]]
    )
    triangles = np.array(
        [_peak_first(np.array(t, dtype=np.int64), vertices) for t in tris],
        dtype=np.int64,
    )
    mesh = Mesh(
        decomposition=m.decomposition,
        vertices=vertices,
        triangles=triangles,
        subdomain=np.array(sub, dtype=np.int64),
        vertex_subdomain=vsub,
        parent=np.array(parent, dtype=np.int64),
        vertex_parents=vertex_parents.astype(np.int64),
    )
    _validate_mesh(mesh)
    return mesh


def refine_adaptive(m: Mesh, marked) -> Mesh:
    """Newest-vertex bisection of the marked elements plus closure.

    Refinement edges are the (1, 2) edges of the peak-first storage.
    Closure never propagates across interfaces because sub-domain
    meshes share no vertices.  An empty marked set is flagged with a
    warning and the mesh is returned unchanged.
    """
    marked = sorted(set(int(t) for t in marked))
    if marked and (marked[0] < 0 or marked[-1] >= m.num_elements):
        raise MeshError("marked set contains invalid element ids")
    if not marked:
        warnings.warn("refine_adaptive called with an empty marked set")
        return m

    tris = m.triangles

    def edge_key(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a < b else (b, a)

    ref_edge = [edge_key(t[1], t[2]) for t in tris]
    marked_edges = {ref_edge[e] for e in marked}
    # closure: an element any of whose edges is marked must have its
    # refinement edge marked as well
    changed = True
    while changed:
        changed = False
        for e, (v0, v1, v2) in enumerate(tris):
            if ref_edge[e] in marked_edges:
                continue
            if (
                edge_key(v0, v1) in marked_edges
                or edge_key(v2, v0) in marked_edges
            ):
                marked_edges.add(ref_edge[e])
                changed = True

    nv = m.num_vertices
    new_pts: list[np.ndarray] = []
    new_par: list[tuple[int, int]] = []
    new_sub: list[int] = []
    midpoint: dict[tuple[int, int], int] = {}

    def mid(a: int, b: int) -> int:
        key = edge_key(a, b)
        idx = midpoint.get(key)
        if idx is None:
            idx = nv + len(new_pts)
            midpoint[key] = idx
            new_pts.append(0.5 * (m.vertices[a] + m.vertices[b]))
            new_par.append(key)
            new_sub.append(int(m.vertex_subdomain[a]))
        return idx

    out_tris: list[tuple[int, int, int]] = []
    out_parent: list[int] = []
    out_sub: list[int] = []

    def emit(tri: tuple[int, int, int], parent: int) -> None:
        p, a, b = tri
        if edge_key(a, b) in marked_edges:
            w = mid(a, b)
            emit((w, p, a), parent)
            emit((w, b, p), parent)
        else:
            out_tris.append(tri)
            out_parent.append(parent)
            out_sub.append(int(m.subdomain[parent]))

    for e, (p, a, b) in enumerate(tris):
        emit((int(p), int(a), int(b)), e)

    vertices = np.concatenate([m.vertices, np.array(new_pts)])
    mesh = Mesh(
        decomposition=m.decomposition,
        vertices=vertices,
        triangles=np.array(out_tris, dtype=np.int64),
        subdomain=np.array(out_sub, dtype=np.int64),
        vertex_subdomain=np.concatenate(
            [m.vertex_subdomain, np.array(new_sub, dtype=np.int64)]
        ),
        parent=np.array(out_parent, dtype=np.int64),
        vertex_parents=np.concatenate(
            [
                np.stack([np.arange(nv), np.arange(nv)], axis=1),
                np.array(new_par, dtype=np.int64),
            ]
        ).astype(np.int64),
    )
    _validate_mesh(mesh)
    return mesh


def _validate_mesh(m: Mesh) -> None:
    c = m.element_coords()
    e1 = c[:, 1] - c[:, 0]
    e2 = c[:, 2] - c[:, 0]
    areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    if not (areas > 0.0).all():
        raise MeshError("non-positive element area (orientation broken)")
    if (m.vertex_subdomain[m.triangles] != m.subdomain[:, None]).any():
        raise MeshError("element references a vertex of another sub-domain")
    # conformity per sub-domain: an interior edge is shared by exactly 2
    # elements, a boundary edge by exactly 1, and no edge by more
    counts: dict[tuple[int, int], int] = {}
    for v0, v1, v2 in m.triangles:
        for a, b in ((v0, v1), (v1, v2), (v2, v0)):
            key = (a, b) if a < b else (b, a)
            counts[key] = counts.get(key, 0) + 1
    if counts and max(counts.values()) > 2:
        raise MeshError("edge shared by more than two elements")
    # hanging nodes: a vertex at the midpoint of an existing edge of the
    # same sub-domain breaks conformity
    vert_round = {tuple(np.round(v, 12)): i for i, v in enumerate(m.vertices)}
    for a, b in counts:
        key = tuple(np.round(0.5 * (m.vertices[a] + m.vertices[b]), 12))
        j = vert_round.get(key)
        if j is not None and m.vertex_subdomain[j] == m.vertex_subdomain[a]:
            raise MeshError("hanging node inside a sub-domain mesh")


def min_interior_angle(m: Mesh) -> float:
    """Smallest interior angle over all elements, in radians."""
    c = m.element_coords()
    best = np.inf
    for k in range(3):
        u = c[:, (k + 1) % 3] - c[:, k]
        v = c[:, (k + 2) % 3] - c[:, k]
        dot = (u * v).sum(axis=1)
        cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        ang = np.arctan2(np.abs(cross), dot)
        best = min(best, float(ang.min()))
    return best


def export_mesh(m: Mesh, path) -> None:
    """Plain-text snapshot: vertex lines "id x y", then triangle lines
    "id v0 v1 v2 subdomain"."""
    with open(path, "w") as fh:
        for i, (x, y) in enumerate(m.vertices):
            fh.write(f"{i} {x:.17g} {y:.17g}\n")
        for e, (v0, v1, v2) in enumerate(m.triangles):
            fh.write(f"{e} {v0} {v1} {v2} {m.subdomain[e]}\n")
