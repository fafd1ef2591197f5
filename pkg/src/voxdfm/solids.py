"""Parametric drilled-hole solids, point membership, tessellation and DFM rules.

A part is a base shape (block, L-block or cylinder) minus cylindrical holes.
Coordinates are in inches.  Boxes span ``[0, extent]`` on each axis; the
cylinder stands on the z=0 plane with its axis through ``(R, R)``.

Holes are addressed by the bounding-box face they are drilled from plus an
offset ``(pos_u, pos_v)`` of the hole axis from that face's center, measured
along the two remaining axes in increasing order (x<y<z).  The hole enters the
material at the first surface its axis meets and runs inward for ``depth``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .triangulate import triangulate

EPS = 1e-9

BLIND_RATIO_LIMIT = 5.0
THROUGH_RATIO_LIMIT = 10.0


class NonManifoldGeometry(ValueError):
    """Part cannot be represented as a closed 2-manifold (overlapping or escaping holes)."""


class NoHoles(ValueError):
    pass


class Face(enum.Enum):
    XNEG = "-x"
    XPOS = "+x"
    YNEG = "-y"
    YPOS = "+y"
    ZNEG = "-z"
    ZPOS = "+z"

    @property
    def axis(self) -> int:
        return "xyz".index(self.value[1])

    @property
    def sign(self) -> int:
        return 1 if self.value[0] == "+" else -1

    @property
    def normal(self) -> np.ndarray:
        n = np.zeros(3)
        n[self.axis] = self.sign
        return n

    @property
    def tangents(self) -> tuple[int, int]:
        u, v = (a for a in range(3) if a != self.axis)
        return u, v

    @classmethod
    def from_axis(cls, axis: int, sign: int) -> "Face":
        return cls(("+" if sign > 0 else "-") + "xyz"[axis])


# Right-handed in-plane frames: cross(e_u, e_v) equals the outward normal.
_FACE_FRAME = {
    Face.ZPOS: (0, 1), Face.ZNEG: (1, 0),
    Face.XPOS: (1, 2), Face.XNEG: (2, 1),
    Face.YPOS: (2, 0), Face.YNEG: (0, 2),
}


class Violation(enum.Enum):
    RATIO_BLIND = "RatioBlind"
    RATIO_THROUGH = "RatioThrough"
    EDGE_PROXIMITY = "EdgeProximity"
    THIN_SECTION = "ThinSection"
    HOLE_SPACING = "HoleSpacing"


# ---------------------------------------------------------------------------
# 2D helpers

def _seg_dist2d(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((p - a) @ ab) / max(float(ab @ ab), 1e-300), 0.0, 1.0)
    d = p - (a + np.multiply.outer(t, ab))
    return np.hypot(d[..., 0], d[..., 1])


def _point_in_polygon(p: np.ndarray, poly: np.ndarray) -> bool:
    x, y = p
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return inside


def polygon_clearance(p: Sequence[float], poly: np.ndarray) -> float:
    """Signed distance from ``p`` to the polygon boundary (positive inside)."""
    p = np.asarray(p, dtype=float)
    d = min(float(_seg_dist2d(p, poly[i], poly[(i + 1) % len(poly)])) for i in range(len(poly)))
    on_edge = d <= EPS
    return d if (on_edge or _point_in_polygon(p, poly)) else -d


def _rect(lo_u, hi_u, lo_v, hi_v) -> np.ndarray:
    return np.array([[lo_u, lo_v], [hi_u, lo_v], [hi_u, hi_v], [lo_u, hi_v]], dtype=float)


# ---------------------------------------------------------------------------
# Base shapes


@dataclass(frozen=True)
class PlanarFace:
    """A planar boundary face: outward direction, plane coordinate, outline in (u, v)."""

    face: Face
    plane: float
    outline: np.ndarray = field(compare=False)


@dataclass(frozen=True)
class Block:
    """Rectangular stock; width, height, depth run along x, y, z."""

    width: float
    height: float
    depth: float
    kind = "block"

    def __post_init__(self):
        if min(self.width, self.height, self.depth) <= 0:
            raise ValueError("block dimensions must be positive")

    @property
    def extents(self) -> np.ndarray:
        return np.array([self.width, self.height, self.depth], dtype=float)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(3), self.extents

    def volume(self) -> float:
        return float(np.prod(self.extents))

    def contains_points(self, p: np.ndarray) -> np.ndarray:
        return ((p >= 0.0) & (p <= self.extents)).all(axis=-1)

    def material_interval(self, axis: int, uv: Sequence[float]) -> tuple[float, float] | None:
        u, v = (a for a in range(3) if a != axis)
        e = self.extents
        if 0.0 <= uv[0] <= e[u] and 0.0 <= uv[1] <= e[v]:
            return 0.0, float(e[axis])
        return None

    def cross_sections(self, axis: int, s0: float, s1: float) -> list[np.ndarray]:
        u, v = (a for a in range(3) if a != axis)
        e = self.extents
        return [_rect(0.0, e[u], 0.0, e[v])]

    def planar_faces(self, segments: int = 0) -> list[PlanarFace]:
        e = self.extents
        faces = []
        for axis in range(3):
            u, v = (a for a in range(3) if a != axis)
            outline = _rect(0.0, e[u], 0.0, e[v])
            faces.append(PlanarFace(Face.from_axis(axis, -1), 0.0, outline))
            faces.append(PlanarFace(Face.from_axis(axis, 1), float(e[axis]), outline))
        return faces

    def lateral_clearance(self, axis: int, uv: Sequence[float], s0: float, s1: float) -> float:
        return min(polygon_clearance(uv, poly) for poly in self.cross_sections(axis, s0, s1))


@dataclass(frozen=True)
class LBlock:
    """Box ``outer`` with the (+x, +z) corner box of size ``cut`` removed.

    The cut runs through the whole y extent, so ``cut[1]`` must equal
    ``outer[1]``; the L profile lies in the xz plane.
    """

    outer: tuple[float, float, float]
    cut: tuple[float, float, float]
    kind = "lblock"

    def __post_init__(self):
        ox, oy, oz = self.outer
        cx, cy, cz = self.cut
        if min(ox, oy, oz, cx, cy, cz) <= 0:
            raise ValueError("L-block dimensions must be positive")
        if not (cx < ox and cz < oz):
            raise ValueError("L-block cut must be smaller than the outer box along x and z")
        if cy != oy:
            raise ValueError("L-block cut must span the full y extent")

    @property
    def extents(self) -> np.ndarray:
        return np.array(self.outer, dtype=float)

    @property
    def step(self) -> tuple[float, float]:
        """(x, z) of the inner concave edge."""
        return self.outer[0] - self.cut[0], self.outer[2] - self.cut[2]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(3), self.extents

    def volume(self) -> float:
        ox, oy, oz = self.outer
        return ox * oy * oz - self.cut[0] * oy * self.cut[2]

    def profile(self) -> np.ndarray:
        ox, _, oz = self.outer
        sx, sz = self.step
        return np.array([[0, 0], [ox, 0], [ox, sz], [sx, sz], [sx, oz], [0, oz]], dtype=float)

    def contains_points(self, p: np.ndarray) -> np.ndarray:
        sx, sz = self.step
        inside = ((p >= 0.0) & (p <= self.extents)).all(axis=-1)
        notch = (p[..., 0] > sx) & (p[..., 2] > sz)
        return inside & ~notch

    def material_interval(self, axis: int, uv: Sequence[float]) -> tuple[float, float] | None:
        ox, oy, oz = self.outer
        sx, sz = self.step
        a, b = uv
        if axis == 1:
            return (0.0, oy) if polygon_clearance((a, b), self.profile()) >= 0 else None
        if axis == 0:  # uv = (y, z)
            if not (0 <= a <= oy and 0 <= b <= oz):
                return None
            return (0.0, ox) if b <= sz else (0.0, sx)
        if not (0 <= a <= ox and 0 <= b <= oy):  # axis z, uv = (x, y)
            return None
        return (0.0, oz) if a <= sx else (0.0, sz)

    def cross_sections(self, axis: int, s0: float, s1: float) -> list[np.ndarray]:
        ox, oy, oz = self.outer
        sx, sz = self.step
        if axis == 1:
            return [self.profile()]
        brk = sx if axis == 0 else sz
        cuts = sorted({s0, s1, *([brk] if s0 < brk < s1 else [])})
        polys = []
        for lo, hi in zip(cuts[:-1], cuts[1:]) if len(cuts) > 1 else [(s0, s0)]:
            mid = 0.5 * (lo + hi)
            if axis == 0:
                polys.append(_rect(0.0, oy, 0.0, oz if mid < sx else sz))
            else:
                polys.append(_rect(0.0, ox if mid < sz else sx, 0.0, oy))
        return polys

    def lateral_clearance(self, axis: int, uv: Sequence[float], s0: float, s1: float) -> float:
        return min(polygon_clearance(uv, poly) for poly in self.cross_sections(axis, s0, s1))

    def planar_faces(self, segments: int = 0) -> list[PlanarFace]:
        ox, oy, oz = self.outer
        sx, sz = self.step
        prof = self.profile()
        return [
            PlanarFace(Face.YNEG, 0.0, prof),
            PlanarFace(Face.YPOS, oy, prof),
            PlanarFace(Face.XNEG, 0.0, _rect(0.0, oy, 0.0, oz)),
            PlanarFace(Face.XPOS, ox, _rect(0.0, oy, 0.0, sz)),
            PlanarFace(Face.XPOS, sx, _rect(0.0, oy, sz, oz)),
            PlanarFace(Face.ZNEG, 0.0, _rect(0.0, ox, 0.0, oy)),
            PlanarFace(Face.ZPOS, oz, _rect(0.0, sx, 0.0, oy)),
            PlanarFace(Face.ZPOS, sz, _rect(sx, ox, 0.0, oy)),
        ]


@dataclass(frozen=True)
class Cylinder:
    """Round stock standing on z=0 with its axis through (radius, radius)."""

    radius: float
    height: float
    kind = "cylinder"

    def __post_init__(self):
        if min(self.radius, self.height) <= 0:
            raise ValueError("cylinder dimensions must be positive")

    @property
    def extents(self) -> np.ndarray:
        return np.array([2 * self.radius, 2 * self.radius, self.height], dtype=float)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros(3), self.extents

    def volume(self) -> float:
        return math.pi * self.radius**2 * self.height

    def contains_points(self, p: np.ndarray) -> np.ndarray:
        r = np.hypot(p[..., 0] - self.radius, p[..., 1] - self.radius)
        return (r <= self.radius) & (p[..., 2] >= 0.0) & (p[..., 2] <= self.height)

    def material_interval(self, axis: int, uv: Sequence[float]) -> tuple[float, float] | None:
        if axis != 2:
            raise ValueError("cylinder parts only take axial holes (+z / -z faces)")
        if math.hypot(uv[0] - self.radius, uv[1] - self.radius) <= self.radius:
            return 0.0, self.height
        return None

    def lateral_clearance(self, axis: int, uv: Sequence[float], s0: float, s1: float) -> float:
        return self.radius - math.hypot(uv[0] - self.radius, uv[1] - self.radius)

    def outline(self, segments: int) -> np.ndarray:
        t = 2 * np.pi * np.arange(segments) / segments
        return np.c_[self.radius + self.radius * np.cos(t), self.radius + self.radius * np.sin(t)]

    def planar_faces(self, segments: int = 64) -> list[PlanarFace]:
        ring = self.outline(segments)
        return [PlanarFace(Face.ZNEG, 0.0, ring), PlanarFace(Face.ZPOS, self.height, ring)]


BaseShape = Union[Block, LBlock, Cylinder]


# ---------------------------------------------------------------------------
# Holes and parts


@dataclass(frozen=True)
class HoleSpec:
    face: Face
    pos_u: float
    pos_v: float
    diameter: float
    depth: float

    def __post_init__(self):
        if self.diameter <= 0 or self.depth <= 0:
            raise ValueError("hole diameter and depth must be positive")

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter


@dataclass(frozen=True)
class HoleGeometry:
    """A hole resolved against its base shape."""

    entry: np.ndarray
    direction: np.ndarray
    radius: float
    depth: float  # effective: clipped to the material thickness
    thickness: float  # material along the axis from the entry surface
    through: bool
    face: Face
    uv: tuple[float, float]
    entry_plane: float

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def end(self) -> np.ndarray:
        return self.entry + self.depth * self.direction

    @property
    def web(self) -> float:
        """Material left beyond the bottom of a blind hole (0 for through holes)."""
        return 0.0 if self.through else self.thickness - self.depth


def resolve_hole(base: BaseShape, hole: HoleSpec) -> HoleGeometry:
    axis = hole.face.axis
    u, v = hole.face.tangents
    lo, hi = base.bounds()
    center = 0.5 * (lo + hi)
    uv = (float(center[u] + hole.pos_u), float(center[v] + hole.pos_v))
    interval = base.material_interval(axis, uv)
    if interval is None:
        raise ValueError(f"hole axis on face {hole.face.value} at {uv} misses the part")
    t0, t1 = interval
    thickness = t1 - t0
    entry_plane = t1 if hole.face.sign > 0 else t0
    entry = np.zeros(3)
    entry[axis] = entry_plane
    entry[u], entry[v] = uv
    through = hole.depth >= thickness - EPS
    return HoleGeometry(
        entry=entry,
        direction=-hole.face.normal,
        radius=hole.radius,
        depth=thickness if through else hole.depth,
        thickness=thickness,
        through=through,
        face=hole.face,
        uv=uv,
        entry_plane=entry_plane,
    )


@dataclass(frozen=True)
class PartModel:
    id: str
    base: BaseShape
    holes: tuple[HoleSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "holes", tuple(self.holes))
        for h in self.holes:
            resolve_hole(self.base, h)

    @cached_property
    def hole_geometry(self) -> tuple[HoleGeometry, ...]:
        return tuple(resolve_hole(self.base, h) for h in self.holes)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.base.bounds()


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray  # (V, 3) float
    triangles: np.ndarray  # (T, 3) int
    normals: np.ndarray  # (T, 3) unit

    @property
    def corners(self) -> np.ndarray:
        """(T, 3, 3) triangle corner coordinates."""
        return self.vertices[self.triangles]

    def signed_volume(self) -> float:
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def is_watertight(self) -> bool:
        """Every edge used exactly twice, once in each direction."""
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        fwd = {tuple(e) for e in directed.tolist()}
        if len(fwd) != len(directed):
            return False
        return all((b, a) in fwd for a, b in fwd)


@dataclass(frozen=True)
class DfmLabel:
    manufacturable: bool
    violations: frozenset

    @classmethod
    def from_violations(cls, violations) -> "DfmLabel":
        v = frozenset(violations)
        return cls(not v, v)


# ---------------------------------------------------------------------------
# Membership and distances


def _in_hole(g: HoleGeometry, p: np.ndarray) -> np.ndarray:
    d = p - g.entry
    t = d @ g.direction
    radial = d - np.multiply.outer(t, g.direction)
    rho2 = np.einsum("...i,...i->...", radial, radial)
    open_cyl = rho2 < g.radius**2
    return open_cyl if g.through else open_cyl & (t < g.depth)


def contains_points(part: PartModel, p: np.ndarray) -> np.ndarray:
    """Vectorized closed-set membership for an array of points (..., 3)."""
    p = np.asarray(p, dtype=float)
    inside = part.base.contains_points(p)
    for g in part.hole_geometry:
        inside &= ~_in_hole(g, p)
    return inside


def contains(part: PartModel, p: Sequence[float]) -> bool:
    return bool(contains_points(part, np.asarray(p, dtype=float)))


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = np.clip(((p - a) @ ab) / float(ab @ ab), 0.0, 1.0)
    d = p - (a + np.multiply.outer(t, ab))
    return np.sqrt(np.einsum("...i,...i->...", d, d))


def distance_to_nearest_hole_axis(part: PartModel, p) -> np.ndarray | float:
    if not part.holes:
        raise NoHoles(part.id)
    p = np.asarray(p, dtype=float)
    d = np.min([_point_segment_distance(p, g.entry, g.end) for g in part.hole_geometry], axis=0)
    return float(d) if d.ndim == 0 else d


def _segment_segment_distance(p1, q1, p2, q2) -> float:
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    c = d1 @ r
    b = d1 @ d2
    denom = a * e - b * b
    s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > 1e-14 else 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
    elif t > 1.0:
        t, s = 1.0, np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm((p1 + d1 * s) - (p2 + d2 * t)))


def hole_gap(g1: HoleGeometry, g2: HoleGeometry) -> float:
    """Wall-to-wall distance between two holes.

    Exact for parallel axes; for skew/perpendicular axes this is the distance
    between the enclosing capsules, a lower bound on the true gap.
    """
    d1, d2 = g1.direction, g2.direction
    if abs(abs(d1 @ d2) - 1.0) < 1e-12:
        # parallel: project onto the common axis
        t1 = sorted([g1.entry @ d1, g1.end @ d1])
        t2 = sorted([g2.entry @ d1, g2.end @ d1])
        off = g2.entry - g1.entry
        lateral = float(np.linalg.norm(off - (off @ d1) * d1))
        axial = max(t2[0] - t1[1], t1[0] - t2[1], 0.0)
        side = lateral - g1.radius - g2.radius
        if axial <= 0.0:
            return side
        return math.hypot(axial, max(side, 0.0))
    return _segment_segment_distance(g1.entry, g1.end, g2.entry, g2.end) - g1.radius - g2.radius


def lateral_clearance(part: PartModel, g: HoleGeometry) -> float:
    """Material thickness between the hole wall and the nearest side surface."""
    axis = g.face.axis
    a = g.entry[axis]
    b = a + g.depth * g.direction[axis]
    return part.base.lateral_clearance(axis, g.uv, min(a, b), max(a, b)) - g.radius


# ---------------------------------------------------------------------------
# DFM rules


def dfm_classify(part: PartModel) -> DfmLabel:
    found = set()
    geoms = part.hole_geometry
    for g in geoms:
        d = g.diameter
        if g.through:
            if g.depth / d >= THROUGH_RATIO_LIMIT - EPS:
                found.add(Violation.RATIO_THROUGH)
        else:
            if g.depth / d >= BLIND_RATIO_LIMIT - EPS:
                found.add(Violation.RATIO_BLIND)
            if g.web < d / 2 - EPS:
                found.add(Violation.THIN_SECTION)
        if lateral_clearance(part, g) < d / 2 - EPS:
            found.add(Violation.EDGE_PROXIMITY)
    for i in range(len(geoms)):
        for j in range(i + 1, len(geoms)):
            limit = max(geoms[i].diameter, geoms[j].diameter) / 2
            if hole_gap(geoms[i], geoms[j]) < limit - EPS:
                found.add(Violation.HOLE_SPACING)
    return DfmLabel.from_violations(found)


def geometry_problems(part: PartModel) -> list[str]:
    """Reasons the part cannot be tessellated as a 2-manifold; empty when fine."""
    problems = []
    geoms = part.hole_geometry
    faces = part.base.planar_faces(64)
    for k, g in enumerate(geoms):
        if isinstance(part.base, Cylinder) and g.face.axis != 2:
            problems.append(f"hole {k}: cylinder parts only take axial holes")
            continue
        if _find_face(part.base, faces, g.face, g.entry_plane, g.uv, g.radius) is None:
            problems.append(f"hole {k}: opening not contained in a single entry face")
        if g.through:
            exit_face = Face.from_axis(g.face.axis, -g.face.sign)
            exit_plane = g.entry_plane + g.thickness * g.direction[g.face.axis]
            if _find_face(part.base, faces, exit_face, exit_plane, g.uv, g.radius) is None:
                problems.append(f"hole {k}: exit not contained in a single face")
        if lateral_clearance(part, g) <= EPS:
            problems.append(f"hole {k}: breaks through a side surface")
    for i in range(len(geoms)):
        for j in range(i + 1, len(geoms)):
            if hole_gap(geoms[i], geoms[j]) <= EPS:
                problems.append(f"holes {i} and {j} intersect")
    return problems


def is_feasible(part: PartModel) -> bool:
    return not geometry_problems(part)


def _find_face(base, faces, face: Face, plane: float, uv, radius: float):
    for f in faces:
        if f.face is not face or abs(f.plane - plane) > EPS:
            continue
        if isinstance(base, Cylinder):
            clearance = base.radius - math.hypot(uv[0] - base.radius, uv[1] - base.radius)
        else:
            clearance = polygon_clearance(uv, f.outline)
        if clearance - radius > EPS:
            return f
    return None


# ---------------------------------------------------------------------------
# Tessellation


class _MeshBuilder:
    def __init__(self):
        self.vertices: list[tuple[float, float, float]] = []
        self.index: dict[tuple[float, float, float], int] = {}
        self.triangles: list[tuple[int, int, int]] = []

    def vertex(self, p) -> int:
        key = (float(p[0]), float(p[1]), float(p[2]))
        if key not in self.index:
            self.index[key] = len(self.vertices)
            self.vertices.append(key)
        return self.index[key]

    def add(self, a: int, b: int, c: int, outward: np.ndarray):
        pa, pb, pc = (np.array(self.vertices[i]) for i in (a, b, c))
        if np.cross(pb - pa, pc - pa) @ outward < 0:
            b, c = c, b
        self.triangles.append((a, b, c))

    def build(self) -> TriMesh:
        v = np.array(self.vertices, dtype=float)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        c = v[t]
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return TriMesh(v, t, n)


def _hole_ring(g: HoleGeometry, t: float, segments: int) -> np.ndarray:
    u, v = g.face.tangents
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.repeat((g.entry + t * g.direction)[None, :], segments, axis=0)
    ring[:, u] += g.radius * np.cos(ang)
    ring[:, v] += g.radius * np.sin(ang)
    return ring


def _to_3d(face: PlanarFace, uv2: np.ndarray) -> np.ndarray:
    u, v = face.face.tangents
    p = np.zeros((len(uv2), 3))
    p[:, face.face.axis] = face.plane
    p[:, u] = uv2[:, 0]
    p[:, v] = uv2[:, 1]
    return p


def tessellate(part: PartModel, circle_segments: int = 64) -> TriMesh:
    """Watertight, outward-oriented triangle mesh of the part boundary."""
    if circle_segments < 8:
        raise ValueError("circle_segments must be >= 8")
    problems = geometry_problems(part)
    if problems:
        raise NonManifoldGeometry(f"{part.id}: " + "; ".join(problems))

    mb = _MeshBuilder()
    faces = part.base.planar_faces(circle_segments)
    openings: dict[int, list[list[int]]] = {i: [] for i in range(len(faces))}
    for g in part.hole_geometry:
        top = [mb.vertex(p) for p in _hole_ring(g, 0.0, circle_segments)]
        bottom = [mb.vertex(p) for p in _hole_ring(g, g.depth, circle_segments)]
        f_in = _find_face(part.base, faces, g.face, g.entry_plane, g.uv, g.radius)
        openings[faces.index(f_in)].append(top)
        if g.through:
            exit_face = Face.from_axis(g.face.axis, -g.face.sign)
            exit_plane = g.entry_plane + g.thickness * g.direction[g.face.axis]
            f_out = _find_face(part.base, faces, exit_face, exit_plane, g.uv, g.radius)
            openings[faces.index(f_out)].append(bottom)
        else:
            c = mb.vertex(g.end)
            for i in range(circle_segments):
                j = (i + 1) % circle_segments
                mb.add(c, bottom[i], bottom[j], -g.direction)
        for i in range(circle_segments):
            j = (i + 1) % circle_segments
            mid = 0.5 * np.add(mb.vertices[top[i]], mb.vertices[top[j]])
            axis_pt = g.entry + ((mid - g.entry) @ g.direction) * g.direction
            inward = axis_pt - mid
            mb.add(top[i], top[j], bottom[j], inward)
            mb.add(top[i], bottom[j], bottom[i], inward)

    for k, f in enumerate(faces):
        fu, fv = _FACE_FRAME[f.face]
        outline3 = _to_3d(f, f.outline)
        outer_ids = [mb.vertex(p) for p in outline3]
        rings = openings[k]
        all_ids = outer_ids + [i for r in rings for i in r]
        pts3 = np.array([mb.vertices[i] for i in all_ids])
        pts2 = pts3[:, [fu, fv]]
        n_out = len(outer_ids)
        holes2, start = [], n_out
        for r in rings:
            holes2.append(pts2[start:start + len(r)])
            start += len(r)
        for a, b, c in triangulate(pts2[:n_out], holes2):
            mb.add(all_ids[a], all_ids[b], all_ids[c], f.face.normal)

    if isinstance(part.base, Cylinder):
        bot = [mb.vertex(p) for p in _to_3d(faces[0], faces[0].outline)]
        top = [mb.vertex(p) for p in _to_3d(faces[1], faces[1].outline)]
        n = circle_segments
        for i in range(n):
            j = (i + 1) % n
            mid = 0.5 * (np.array(mb.vertices[bot[i]]) + np.array(mb.vertices[bot[j]]))
            radial = np.array([mid[0] - part.base.radius, mid[1] - part.base.radius, 0.0])
            mb.add(bot[i], bot[j], top[j], radial)
            mb.add(bot[i], top[j], top[i], radial)
    return mb.build()
