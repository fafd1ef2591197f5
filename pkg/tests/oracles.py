"""Independent reference computations used by the tests.

Written from the part parameters alone, without calling the code under test
beyond reading the part description.
"""

import math

import numpy as np

from voxdfm.solids import Block, Cylinder, LBlock


def _segment_distance_2d(p, a, b):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def _polygon_inside(p, poly):
    x, y = p[..., 0], p[..., 1]
    inside = np.zeros(p.shape[:-1], dtype=bool)
    for i in range(len(poly)):
        (x0, y0), (x1, y1) = poly[i - 1], poly[i]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xc)
    return inside


def _extrusion_distance(d2, in2, h, length):
    """Distance to the boundary of a 2D region extruded over [0, length].

    ``d2`` is the unsigned 2D boundary distance, ``in2`` the 2D membership and
    ``h`` the coordinate along the extrusion.
    """
    inside = in2 & (h >= 0) & (h <= length)
    d_in = np.minimum(d2, np.minimum(h, length - h))
    out2 = np.where(in2, 0.0, d2)
    outh = np.maximum(np.maximum(-h, h - length), 0.0)
    return np.where(inside, d_in, np.hypot(out2, outh))


def _polygon_prism(p2, h, poly, length):
    d2 = np.min([_segment_distance_2d(p2, poly[i - 1], poly[i]) for i in range(len(poly))], axis=0)
    return _extrusion_distance(d2, _polygon_inside(p2, poly), h, length)


def _disk_prism(p2, h, center, radius, length):
    rho = np.linalg.norm(p2 - center, axis=-1)
    return _extrusion_distance(np.abs(rho - radius), rho <= radius, h, length)


def base_boundary_distance(base, pts):
    p = np.asarray(pts, float)
    if isinstance(base, Block):
        w, h, d = base.width, base.height, base.depth
        rect = np.array([[0, 0], [w, 0], [w, d], [0, d]], float)
        return _polygon_prism(p[..., [0, 2]], p[..., 1], rect, h)
    if isinstance(base, LBlock):
        ox, oy, oz = base.outer
        cx, _, cz = base.cut
        sx, sz = ox - cx, oz - cz
        prof = np.array([[0, 0], [ox, 0], [ox, sz], [sx, sz], [sx, oz], [0, oz]], float)
        return _polygon_prism(p[..., [0, 2]], p[..., 1], prof, oy)
    if isinstance(base, Cylinder):
        r = base.radius
        return _disk_prism(p[..., :2], p[..., 2], np.array([r, r]), r, base.height)
    raise TypeError(base)


def hole_boundary_distance(base, hole, pts):
    """Distance to the surface of the hole's drill cylinder (entry face to bottom)."""
    p = np.asarray(pts, float)
    lo = np.zeros(3)
    hi = np.array(base_extents(base))
    axis = "xyz".index(hole.face.value[1])
    u, v = [a for a in range(3) if a != axis]
    center = 0.5 * (lo + hi)
    cu, cv = center[u] + hole.pos_u, center[v] + hole.pos_v
    top = hi[axis]
    if isinstance(base, LBlock):
        sx, sz = base.outer[0] - base.cut[0], base.outer[2] - base.cut[2]
        across = {2: cu, 0: cv}.get(axis)  # the x or z coordinate of the axis
        if axis == 2 and across > sx:
            top = sz
        elif axis == 0 and across > sz:
            top = sx
    entry = top if hole.face.value[0] == "+" else 0.0
    depth = min(hole.depth, top)
    h = (entry - p[..., axis]) if hole.face.value[0] == "+" else (p[..., axis] - entry)
    return _disk_prism(p[..., [u, v]], h, np.array([cu, cv]), hole.diameter / 2, depth)


def base_extents(base):
    if isinstance(base, Block):
        return base.width, base.height, base.depth
    if isinstance(base, LBlock):
        return tuple(base.outer)
    return 2 * base.radius, 2 * base.radius, base.height


def boundary_distance_lower_bound(part, pts):
    """Lower bound on the distance from each point to the part's surface.

    The surface of base-minus-holes lies inside the union of the primitive
    surfaces, so the smallest primitive-surface distance never exceeds it.
    """
    d = base_boundary_distance(part.base, pts)
    for hole in part.holes:
        d = np.minimum(d, hole_boundary_distance(part.base, hole, pts))
    return d


def point_segment_distance(p, a, b):
    p, a, b = (np.asarray(x, float) for x in (p, a, b))
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1)


def adadelta_first_step(g, rho=0.95, eps=1e-6):
    """Closed form of the first update from zero accumulators."""
    eg2 = (1 - rho) * g * g
    return -math.sqrt(eps) / math.sqrt(eg2 + eps) * g
