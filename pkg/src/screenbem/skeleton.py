"""Partition of the interface skeleton induced by the two adjacent
sub-domain meshes.

Each interface is cut at every mesh vertex either side places on it;
the resulting sub-segments are the finest common partition, and each
sub-segment lies inside exactly one element edge per side.  The jump of
a broken P1 function on a sub-segment is

    [v] = v_left - v_right,

left and right taken with respect to the interface tangent (oriented
from the lexicographically smaller endpoint).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import GEOM_REL_TOL, Interface, Mesh, MeshError

__all__ = ["SkeletonPartition", "SubSegment", "build_skeleton_partition"]


@dataclass(frozen=True)
class SubSegment:
    """One piece of an interface between consecutive breakpoints.

    ``left_vertices``/``right_vertices`` are the two mesh vertex ids of
    the covering element edge on that side, with ``left_arcs`` /
    ``right_arcs`` their arclength coordinates; the edge may extend
    beyond [s0, s1] when the other side is finer.
    """

    interface: int
    s0: float
    s1: float
    left_element: int
    left_vertices: tuple[int, int]
    left_arcs: tuple[float, float]
    right_element: int
    right_vertices: tuple[int, int]
    right_arcs: tuple[float, float]

    @property
    def length(self) -> float:
        return self.s1 - self.s0


@dataclass(frozen=True)
class SkeletonPartition:
    """All sub-segments of all interfaces for one mesh."""

    interfaces: tuple[Interface, ...]
    breakpoints: tuple[np.ndarray, ...]  # per interface, sorted arclengths
    subsegments: tuple[SubSegment, ...]

    @property
    def total_length(self) -> float:
        return sum(s.length for s in self.subsegments)

    def segments_of(self, interface: int) -> list[SubSegment]:
        return [s for s in self.subsegments if s.interface == interface]


def _side_edges(m: Mesh, sub: int, itf: Interface, tol: float):
    """Boundary edges of sub-domain ``sub`` lying on the interface.

    Returns a list of (lo, hi, element, (vid_lo, vid_hi)) sorted by lo,
    verified to tile [0, length] exactly.
    """
    a, t, length = itf.a, itf.tangent, itf.length
    arc = (m.vertices - a) @ t
    off = m.vertices - a - arc[:, None] * t
    on_seg = (
        (np.hypot(off[:, 0], off[:, 1]) <= tol)
        & (arc >= -tol)
        & (arc <= length + tol)
        & (m.vertex_subdomain == sub)
    )
    found = []
    el_ids = np.nonzero(m.subdomain == sub)[0]
    tris = m.triangles[el_ids]
    for k in range(3):
        va = tris[:, (k + 1) % 3]
        vb = tris[:, (k + 2) % 3]
        hit = np.nonzero(on_seg[va] & on_seg[vb])[0]
        for h in hit:
            sp, sq = float(arc[va[h]]), float(arc[vb[h]])
            if sp <= sq:
                found.append((sp, sq, int(el_ids[h]), (int(va[h]), int(vb[h]))))
            else:
                found.append((sq, sp, int(el_ids[h]), (int(vb[h]), int(va[h]))))
    found.sort()
    if not found:
        raise MeshError(
            f"sub-domain {sub} has no element edge on interface "
            f"{itf.a}-{itf.b}"
        )
    cursor = 0.0
    for lo, hi, _, _ in found:
        if abs(lo - cursor) > tol:
            raise MeshError(
                f"interface coverage gap on sub-domain {sub}: a mesh "
                f"vertex lies off the segment beyond tolerance"
            )
        cursor = hi
    if abs(cursor - length) > tol:
        raise MeshError(
            f"interface not fully covered by sub-domain {sub} edges"
        )
    return found


def build_skeleton_partition(m: Mesh) -> SkeletonPartition:
    """Merge both sides' vertices on each interface into breakpoints and
    match every sub-segment with its covering edge per side.

    Invariants checked here: each side's edges tile the interface, each
    sub-segment has exactly one covering edge per side, and sub-segment
    extents sum to the interface length.
    """
    interfaces = m.decomposition.interfaces
    all_breaks: list[np.ndarray] = []
    subsegments: list[SubSegment] = []
    for idx, itf in enumerate(interfaces):
        length = itf.length
        tol = GEOM_REL_TOL * max(length, 1.0)
        left_edges = _side_edges(m, itf.left, itf, tol)
        right_edges = _side_edges(m, itf.right, itf, tol)
        cuts = np.array(
            [0.0, length]
            + [s for lo, hi, _, _ in left_edges for s in (lo, hi)]
            + [s for lo, hi, _, _ in right_edges for s in (lo, hi)]
        )
        cuts = np.sort(cuts)
        keep = [cuts[0]]
        for s in cuts[1:]:
            if s - keep[-1] > tol:
                keep.append(s)
        breaks = np.array(keep)
        # snap the last breakpoint to the exact segment length
        breaks[-1] = length
        all_breaks.append(breaks)

        def covering(edges, s0, s1, side):
            hits = [
                rec for rec in edges if rec[0] <= s0 + tol and rec[1] >= s1 - tol
            ]
            if len(hits) != 1:
                raise MeshError(
                    f"sub-segment [{s0}, {s1}] of interface {idx} has "
                    f"{len(hits)} covering edges on the {side} side"
                )
            return hits[0]

        for s0, s1 in zip(breaks[:-1], breaks[1:]):
            lo_l, hi_l, el_l, (va_l, vb_l) = covering(left_edges, s0, s1, "left")
            lo_r, hi_r, el_r, (va_r, vb_r) = covering(right_edges, s0, s1, "right")
            subsegments.append(
                SubSegment(
                    interface=idx,
                    s0=float(s0),
                    s1=float(s1),
                    left_element=el_l,
                    left_vertices=(va_l, vb_l),
                    left_arcs=(lo_l, hi_l),
                    right_element=el_r,
                    right_vertices=(va_r, vb_r),
                    right_arcs=(lo_r, hi_r),
                )
            )
    return SkeletonPartition(
        interfaces=tuple(interfaces),
        breakpoints=tuple(all_breaks),
        subsegments=tuple(subsegments),
    )
