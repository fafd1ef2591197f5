"""Ear-clipping triangulation of planar polygons with holes.

Holes are merged into the outer boundary with one bridge edge each (hole's
rightmost vertex to the nearest visible boundary vertex), after which the
resulting weakly simple polygon is ear-clipped.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class TriangulationError(ValueError):
    pass


def signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segment_hits(p, q, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Closed segment pq against closed segments a[i]b[i]; touching counts."""
    def orient(o, u, v):
        return (u[..., 0] - o[..., 0]) * (v[..., 1] - o[..., 1]) - (u[..., 1] - o[..., 1]) * (v[..., 0] - o[..., 0])

    o1 = np.sign(orient(p, q, a))
    o2 = np.sign(orient(p, q, b))
    o3 = np.sign(orient(a, b, p[None, :]))
    o4 = np.sign(orient(a, b, q[None, :]))
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    boxes = (
        (np.minimum(p, q)[None, :] <= hi).all(axis=1)
        & (np.maximum(p, q)[None, :] >= lo).all(axis=1)
    )
    return (o1 * o2 <= 0) & (o3 * o4 <= 0) & boxes


def _in_wedge(pts, prev_i, at_i, next_i, target) -> bool:
    # Interior lies to the left of prev->at and at->next.
    a, p, b = pts[prev_i], pts[at_i], pts[next_i]
    left_in = _cross(a, p, target) > 0.0
    left_out = _cross(p, b, target) > 0.0
    if _cross(a, p, b) > 0.0:
        return left_in and left_out
    return left_in or left_out


def _bridge(pts: np.ndarray, ring: list[int], hole: list[int], others: list[list[int]]) -> list[int]:
    hx = pts[hole, 0]
    best = max(range(len(hole)), key=lambda j: (hx[j], -pts[hole[j], 1], -j))
    hole = hole[best:] + hole[:best]
    m = hole[0]
    pm = pts[m]

    edges = [(ring[j], ring[(j + 1) % len(ring)]) for j in range(len(ring))]
    for h in [hole, *others]:
        edges += [(h[j], h[(j + 1) % len(h)]) for j in range(len(h))]
    ea = np.array([e[0] for e in edges])
    eb = np.array([e[1] for e in edges])

    ring_pts = pts[ring]
    dist = np.hypot(ring_pts[:, 0] - pm[0], ring_pts[:, 1] - pm[1])
    for k in np.lexsort((np.arange(len(ring)), dist)):
        p = ring[k]
        if not _in_wedge(pts, ring[k - 1], p, ring[(k + 1) % len(ring)], pm):
            continue
        if not _in_wedge(pts, hole[-1], m, hole[1], pts[p]):
            continue
        free = (ea != p) & (eb != p) & (ea != m) & (eb != m)
        if _segment_hits(pts[p], pm, pts[ea[free]], pts[eb[free]]).any():
            continue
        return ring[: k + 1] + hole + [m] + ring[k:]
    raise TriangulationError("no visible bridge vertex for hole")


def _ear_clip(pts: np.ndarray, ring: list[int]) -> list[tuple[int, int, int]]:
    ring = list(ring)
    tris: list[tuple[int, int, int]] = []
    i = 0
    stall = 0
    strict = False
    while len(ring) > 3:
        n = len(ring)
        i %= n
        a, b, c = ring[i - 1], ring[i], ring[(i + 1) % n]
        pa, pb, pc = pts[a], pts[b], pts[c]
        ear = _cross(pa, pb, pc) > 0.0
        if ear:
            ids = np.array(ring)
            others = ids[(ids != a) & (ids != b) & (ids != c)]
            q = pts[others]
            d1 = (pb[0] - pa[0]) * (q[:, 1] - pa[1]) - (pb[1] - pa[1]) * (q[:, 0] - pa[0])
            d2 = (pc[0] - pb[0]) * (q[:, 1] - pb[1]) - (pc[1] - pb[1]) * (q[:, 0] - pb[0])
            d3 = (pa[0] - pc[0]) * (q[:, 1] - pc[1]) - (pa[1] - pc[1]) * (q[:, 0] - pc[0])
            if strict:
                inside = (d1 > 0) & (d2 > 0) & (d3 > 0)
            else:
                inside = (d1 >= 0) & (d2 >= 0) & (d3 >= 0)
            ear = not inside.any()
        if ear:
            tris.append((a, b, c))
            del ring[i]
            stall = 0
            continue
        i += 1
        stall += 1
        if stall > len(ring):
            if strict:
                # last resort: drop a zero-area vertex, if any
                for j in range(len(ring)):
                    if _cross(pts[ring[j - 1]], pts[ring[j]], pts[ring[(j + 1) % len(ring)]]) == 0.0:
                        del ring[j]
                        break
                else:
                    raise TriangulationError("ear clipping stalled")
            strict = True
            stall = 0
    if _cross(pts[ring[0]], pts[ring[1]], pts[ring[2]]) > 0.0:
        tris.append((ring[0], ring[1], ring[2]))
    return tris


def triangulate(outer: np.ndarray, holes: Sequence[np.ndarray] = ()) -> list[tuple[int, int, int]]:
    """Triangulate a simple polygon with simple, disjoint holes.

    Returns counter-clockwise index triples into the vertex list formed by
    concatenating ``outer`` and then each hole in order.
    """
    outer = np.asarray(outer, dtype=float)
    pts = np.vstack([outer, *[np.asarray(h, dtype=float) for h in holes]]) if holes else outer
    ring = list(range(len(outer)))
    if signed_area(outer) < 0:
        ring.reverse()
    rings = []
    offset = len(outer)
    for h in holes:
        idx = list(range(offset, offset + len(h)))
        if signed_area(np.asarray(h, dtype=float)) > 0:
            idx.reverse()
        rings.append(idx)
        offset += len(h)
    rings.sort(key=lambda r: (-pts[r, 0].max(), r[0]))
    for k, h in enumerate(rings):
        ring = _bridge(pts, ring, h, rings[k + 1:])
    return _ear_clip(pts, ring)
