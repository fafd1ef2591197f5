"""Voxelization of parts and meshes into multi-channel occupancy grids.

Occupancy comes from per-column ray parity against the boundary mesh (a
voxel center is inside when an odd number of surface crossings lie below it
along the column) or, as an oracle, from exact point membership.  Boundary
voxels are those whose box touches at least one triangle; they carry the
normalized sum of the touching triangles' normals.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .solids import PartModel, TriMesh, contains_points, tessellate

VOX_MAGIC = b"VXG1"
_HEADER = struct.Struct("<4s4I4d")

DEGENERACY_TOL = 1e-10


class DegenerateHit(RuntimeError):
    pass


class SpecMismatch(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float, float]
    spacing: float
    dims: tuple[int, int, int]  # (nx, ny, nz)

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if min(self.dims) < 1:
            raise ValueError("dims must be >= 1")
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.spacing

    def center_points(self) -> np.ndarray:
        """(nz, ny, nx, 3) voxel center coordinates in (x, y, z)."""
        z, y, x = np.meshgrid(self.centers(2), self.centers(1), self.centers(0), indexing="ij")
        return np.stack([x, y, z], axis=-1)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape (nz, ny, nx)."""
        nx, ny, nz = self.dims
        return nz, ny, nx

    @property
    def diagonal(self) -> float:
        return self.spacing * 3**0.5


def grid_for_bounds(lo, hi, n: int = 32, pad: float = 0.05) -> GridSpec:
    """Cubic n^3 grid centered on a box, ``pad`` larger than its longest side."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    side = float((hi - lo).max()) * (1.0 + pad)
    center = 0.5 * (lo + hi)
    return GridSpec(tuple(center - side / 2), side / n, (n, n, n))


def grid_for_part(part: PartModel, n: int = 32, pad: float = 0.05) -> GridSpec:
    return grid_for_bounds(*part.bounds(), n=n, pad=pad)


@dataclass
class VoxelGrid:
    spec: GridSpec
    data: np.ndarray  # (channels, nz, ny, nx)

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[1:] != self.spec.shape:
            raise SpecMismatch(f"data shape {self.data.shape} does not match grid {self.spec.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]


class EncodingKind(enum.Enum):
    OCCUPANCY = "occ"
    FOUR_CHANNEL = "four"
    COUPLED = "coupled"

    @property
    def channels(self) -> int:
        return {"occ": 1, "four": 4, "coupled": 3}[self.value]


# ---------------------------------------------------------------------------
# Parity voxelization


def _column_hits(tri: np.ndarray, pa: np.ndarray, pb: np.ndarray):
    """Crossings of columns at (pa[k], pb[k]) with all triangles in (a, b, r) coords.

    Returns (column index, r) of clean hits and a per-column flag that is set
    when the column grazes an edge or vertex or has an odd crossing count.
    """
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    area2 = (v1[:, 0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1]) - (v1[:, 1] - v0[:, 1]) * (v2[:, 0] - v0[:, 0])
    flat = np.abs(area2) >= 1e-300
    v0, v1, v2, area2 = v0[flat], v1[flat], v2[flat], area2[flat]
    pa, pb = pa[:, None], pb[:, None]
    l0 = ((v1[:, 0] - pa) * (v2[:, 1] - pb) - (v1[:, 1] - pb) * (v2[:, 0] - pa)) / area2
    l1 = ((v2[:, 0] - pa) * (v0[:, 1] - pb) - (v2[:, 1] - pb) * (v0[:, 0] - pa)) / area2
    l2 = 1.0 - l0 - l1
    lmin = np.minimum(np.minimum(l0, l1), l2)
    inside = lmin > DEGENERACY_TOL
    graze = ((lmin >= -DEGENERACY_TOL) & ~inside).any(axis=1)
    cols, k = np.nonzero(inside)
    rs = l0[cols, k] * v0[k, 2] + l1[cols, k] * v1[k, 2] + l2[cols, k] * v2[k, 2]
    odd = inside.sum(axis=1) % 2 == 1
    return cols, rs, graze | odd


def _parity(tri: np.ndarray, ca: np.ndarray, cb: np.ndarray, cr: np.ndarray, spacing: float) -> np.ndarray:
    """Occupancy (na, nb, nr) for columns along r; tri in (a, b, r) coordinates."""
    na, nb, nr = len(ca), len(cb), len(cr)
    toggles = np.zeros((na * nb, nr + 1), dtype=np.int32)
    degenerate = np.zeros(na * nb, dtype=bool)

    lo = tri.min(axis=1)
    hi = tri.max(axis=1)
    ia0 = np.searchsorted(ca, lo[:, 0], side="left")
    ia1 = np.searchsorted(ca, hi[:, 0], side="right")
    ib0 = np.searchsorted(cb, lo[:, 1], side="left")
    ib1 = np.searchsorted(cb, hi[:, 1], side="right")
    for t in range(len(tri)):
        if ia0[t] >= ia1[t] or ib0[t] >= ib1[t]:
            continue
        A, B = np.meshgrid(np.arange(ia0[t], ia1[t]), np.arange(ib0[t], ib1[t]), indexing="ij")
        col = (A * nb + B).ravel()
        bary = _barycentric(tri[t], ca[A.ravel()], cb[B.ravel()])
        if bary is None:
            continue
        lmin = bary.min(axis=0)
        inside = lmin > DEGENERACY_TOL
        degenerate[col[(lmin >= -DEGENERACY_TOL) & ~inside]] = True
        r = bary[:, inside].T @ tri[t, :, 2]
        np.add.at(toggles, (col[inside], np.searchsorted(cr, r, side="right")), 1)

    degenerate |= toggles.sum(axis=1) % 2 == 1
    eps = spacing / 1024.0
    offsets = [(eps, 2 * eps), (-eps, -2 * eps), (2 * eps, -eps), (-2 * eps, eps)]
    pending = np.nonzero(degenerate)[0]
    for da, db in offsets:
        if not len(pending):
            break
        a_idx, b_idx = np.divmod(pending, nb)
        cols, rs, deg = _column_hits(tri, ca[a_idx] + da, cb[b_idx] + db)
        good = ~deg[cols]
        done = pending[~deg]
        toggles[done] = 0
        np.add.at(toggles, (pending[cols[good]], np.searchsorted(cr, rs[good], side="right")), 1)
        pending = pending[deg]
    if len(pending):
        a, b = divmod(int(pending[0]), nb)
        raise DegenerateHit(f"column ({a}, {b}) grazes mesh edges at every offset")

    occ = np.cumsum(toggles, axis=1)[:, :nr] % 2
    return occ.reshape(na, nb, nr).astype(np.uint8)


def _barycentric(v: np.ndarray, pa: np.ndarray, pb: np.ndarray) -> np.ndarray | None:
    """(3, M) barycentric coordinates of points in the triangle's (a, b) projection."""
    v0, v1, v2 = v
    area2 = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v1[1] - v0[1]) * (v2[0] - v0[0])
    if abs(area2) < 1e-300:
        return None
    l0 = ((v1[0] - pa) * (v2[1] - pb) - (v1[1] - pb) * (v2[0] - pa)) / area2
    l1 = ((v2[0] - pa) * (v0[1] - pb) - (v2[1] - pb) * (v0[0] - pa)) / area2
    return np.stack([l0, l1, 1.0 - l0 - l1])


def voxelize_parity(mesh: TriMesh, spec: GridSpec, axis: int = 2) -> VoxelGrid:
    """Occupancy by ray parity along columns parallel to ``axis`` (0=x, 1=y, 2=z)."""
    a, b = (k for k in range(3) if k != axis)
    tri = mesh.corners[:, :, [a, b, axis]]
    occ = _parity(tri, spec.centers(a), spec.centers(b), spec.centers(axis), spec.spacing)
    # occ is indexed (a, b, axis); reorder to (z, y, x)
    order = [a, b, axis]
    zyx = np.transpose(occ, [order.index(2), order.index(1), order.index(0)])
    return VoxelGrid(spec, zyx[None].astype(np.float32))


def voxelize_analytic(part: PartModel, spec: GridSpec) -> VoxelGrid:
    occ = contains_points(part, spec.center_points())
    return VoxelGrid(spec, occ[None].astype(np.float32))


# ---------------------------------------------------------------------------
# Triangle / box overlap


def tri_aabb_intersect_pairs(tris: np.ndarray, centers: np.ndarray, half) -> np.ndarray:
    """Separating-axis overlap test of triangles against closed boxes, pairwise.

    ``tris`` is (M, 3, 3) and ``centers`` (M, 3); pair ``i`` tests ``tris[i]``
    against the box at ``centers[i]`` with half-extents ``half`` (scalar or
    length 3).  Returns a boolean (M,) array; touching counts as overlap.
    """
    h = np.broadcast_to(np.asarray(half, dtype=float), (3,))
    v = tris - centers[:, None, :]  # (M, vertex, xyz)

    # box face normals
    ok = ((v.min(axis=1) <= h) & (v.max(axis=1) >= -h)).all(axis=1)

    e = np.stack([tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 1], tris[:, 0] - tris[:, 2]], axis=1)
    # triangle normal
    n = np.cross(e[:, 0], e[:, 1])
    ok &= np.abs(np.einsum("mc,mc->m", v[:, 0], n)) <= np.abs(n) @ h

    # box axis x triangle edge, only for pairs still undecided; a zero axis
    # (edge parallel to the box axis) projects everything to 0 and never separates
    idx = np.nonzero(ok)[0]
    v, e = v[idx], e[idx]
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    keep = np.ones(len(idx), dtype=bool)
    for j in range(3):
        ex, ey, ez = e[:, j, 0:1], e[:, j, 1:2], e[:, j, 2:3]
        for proj, r in (
            (ey * z - ez * y, h[1] * np.abs(ez) + h[2] * np.abs(ey)),  # x cross e
            (ez * x - ex * z, h[0] * np.abs(ez) + h[2] * np.abs(ex)),  # y cross e
            (ex * y - ey * x, h[0] * np.abs(ey) + h[1] * np.abs(ex)),  # z cross e
        ):
            r = r[:, 0]
            keep &= (proj.min(axis=1) <= r) & (proj.max(axis=1) >= -r)
    ok[idx] = keep
    return ok


def tri_aabb_intersect_many(tri: np.ndarray, centers: np.ndarray, half) -> np.ndarray:
    """One triangle (3, 3) against many boxes centered at ``centers`` (M, 3)."""
    tri = np.asarray(tri, dtype=float)
    return tri_aabb_intersect_pairs(np.broadcast_to(tri, (len(centers), 3, 3)), centers, half)


def tri_aabb_intersect(tri: Sequence, box_min: Sequence[float], box_max: Sequence[float]) -> bool:
    tri = np.asarray(tri, dtype=float)
    lo, hi = np.asarray(box_min, float), np.asarray(box_max, float)
    return bool(tri_aabb_intersect_many(tri, (0.5 * (lo + hi))[None], 0.5 * (hi - lo))[0])


# ---------------------------------------------------------------------------
# Boundary normals


@dataclass
class BoundaryNormals:
    """Sparse map from boundary voxel index (z, y, x) to unit-or-zero normal."""

    spec: GridSpec
    index: np.ndarray  # (M, 3) int, rows (z, y, x), sorted
    normal: np.ndarray  # (M, 3) float64 (nx, ny, nz)

    def as_dict(self) -> dict[tuple[int, int, int], np.ndarray]:
        return {tuple(int(i) for i in k): n for k, n in zip(self.index, self.normal)}

    def mask(self) -> np.ndarray:
        m = np.zeros(self.spec.shape, dtype=bool)
        m[tuple(self.index.T)] = True
        return m

    def dense(self) -> np.ndarray:
        """(3, nz, ny, nx) normal components, zero off the boundary."""
        out = np.zeros((3, *self.spec.shape))
        out[(slice(None), *self.index.T)] = self.normal.T
        return out


def boundary_normals(mesh: TriMesh, spec: GridSpec, chunk: int = 65536) -> BoundaryNormals:
    nz, ny, nx = spec.shape
    origin = np.asarray(spec.origin)
    s = spec.spacing
    dims = np.array(spec.dims)
    corners = mesh.corners
    # candidate voxels: closed cells touching the triangle's bbox, then the exact test
    lo = np.ceil((corners.min(axis=1) - origin) / s - 1e-6).astype(np.int64) - 1
    hi = np.floor((corners.max(axis=1) - origin) / s + 1e-6).astype(np.int64)
    lo, hi = np.clip(lo, 0, dims - 1), np.clip(hi, 0, dims - 1)
    outside = (corners.max(axis=1) < origin).any(axis=1) | (corners.min(axis=1) > origin + dims * s).any(axis=1)
    tri_ids, cells = [], []
    for t in np.nonzero(~outside)[0]:
        X, Y, Z = np.meshgrid(*(np.arange(lo[t, k], hi[t, k] + 1) for k in range(3)), indexing="ij")
        c = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        cells.append(c)
        tri_ids.append(np.full(len(c), t))
    sums = np.zeros((nz * ny * nx, 3))
    hit = np.zeros(nz * ny * nx, dtype=bool)
    if cells:
        tri_ids = np.concatenate(tri_ids)
        cells = np.concatenate(cells)
        for i in range(0, len(cells), chunk):
            t, c = tri_ids[i:i + chunk], cells[i:i + chunk]
            ok = tri_aabb_intersect_pairs(corners[t], origin + (c + 0.5) * s, 0.5 * s)
            t, c = t[ok], c[ok]
            flat = (c[:, 2] * ny + c[:, 1]) * nx + c[:, 0]
            hit[flat] = True
            np.add.at(sums, flat, mesh.normals[t])
    flat = np.nonzero(hit)[0]
    vec = sums[flat]
    mag = np.linalg.norm(vec, axis=1)
    unit = np.zeros_like(vec)
    keep = mag >= 1e-9
    unit[keep] = vec[keep] / mag[keep, None]
    z, rem = np.divmod(flat, ny * nx)
    y, x = np.divmod(rem, nx)
    return BoundaryNormals(spec, np.stack([z, y, x], axis=1), unit)


# ---------------------------------------------------------------------------
# Encodings


def encode(occ: VoxelGrid, normals: BoundaryNormals, kind: EncodingKind) -> VoxelGrid:
    if occ.channels != 1:
        raise ValueError("occupancy grid must have exactly one channel")
    if normals.spec != occ.spec:
        raise SpecMismatch("normal map and occupancy grid are on different grids")
    kind = EncodingKind(kind)
    if kind is EncodingKind.OCCUPANCY:
        return VoxelGrid(occ.spec, occ.data.astype(np.float32, copy=True))
    n = normals.dense()
    if kind is EncodingKind.FOUR_CHANNEL:
        data = np.concatenate([occ.data, n], axis=0)
    else:
        data = np.repeat(occ.data, 3, axis=0).astype(np.float64)
        m = normals.mask()
        data[:, m] = n[:, m]
    return VoxelGrid(occ.spec, data.astype(np.float32))


def voxelize_part(
    part: PartModel,
    spec: GridSpec,
    kind: EncodingKind = EncodingKind.COUPLED,
    engine: str = "parity",
    circle_segments: int = 64,
) -> VoxelGrid:
    """Tessellate, voxelize and encode one part."""
    kind = EncodingKind(kind)
    mesh = tessellate(part, circle_segments)
    if engine == "parity":
        occ = voxelize_parity(mesh, spec)
    elif engine == "analytic":
        occ = voxelize_analytic(part, spec)
    else:
        raise ValueError(f"unknown voxelization engine {engine!r}")
    if kind is EncodingKind.OCCUPANCY:
        return occ
    return encode(occ, boundary_normals(mesh, spec), kind)


def voxelize_part_encodings(
    part: PartModel,
    spec: GridSpec,
    kinds: Sequence[EncodingKind] = tuple(EncodingKind),
    circle_segments: int = 64,
) -> dict[EncodingKind, VoxelGrid]:
    """Several encodings of one part from a single tessellation and parity pass."""
    mesh = tessellate(part, circle_segments)
    occ = voxelize_parity(mesh, spec)
    kinds = [EncodingKind(k) for k in kinds]
    normals = boundary_normals(mesh, spec) if any(k is not EncodingKind.OCCUPANCY for k in kinds) else None
    return {k: occ if k is EncodingKind.OCCUPANCY else encode(occ, normals, k) for k in kinds}


# ---------------------------------------------------------------------------
# .vox files


def write_vox(grid: VoxelGrid, path) -> None:
    nx, ny, nz = grid.spec.dims
    header = _HEADER.pack(VOX_MAGIC, nx, ny, nz, grid.channels, *grid.spec.origin, grid.spec.spacing)
    payload = np.ascontiguousarray(grid.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_vox(path) -> VoxelGrid:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, nx, ny, nz, ch, ox, oy, oz, spacing = _HEADER.unpack_from(raw)
    if magic != VOX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if min(nx, ny, nz, ch) < 1 or not spacing > 0:
        raise FormatError(f"{path}: invalid dimensions")
    n = nx * ny * nz * ch
    if len(raw) != _HEADER.size + 4 * n:
        raise FormatError(f"{path}: payload is {len(raw) - _HEADER.size} bytes, expected {4 * n}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(ch, nz, ny, nx).astype(np.float32)
    return VoxelGrid(GridSpec((ox, oy, oz), spacing, (nx, ny, nz)), data)
