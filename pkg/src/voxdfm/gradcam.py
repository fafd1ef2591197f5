"""Gradient-weighted class activation maps for the 3D classifier, and rendering.

The map for a class is built from the last convolution layer's activations:
each feature map is weighted by the spatial mean of the class score's
gradient with respect to it, the weighted maps are summed, and negative
values are cut off.  The class score is the pre-sigmoid logit for the
manufacturable class and its negation for the other class.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn3d.network import Network, NoConvLayer
from .solids import PartModel, distance_to_nearest_hole_axis
from .voxelize import GridSpec, SpecMismatch, VoxelGrid


class CamClass(enum.Enum):
    MANUFACTURABLE = "manufacturable"
    NON_MANUFACTURABLE = "non_manufacturable"

    @property
    def logit_sign(self) -> float:
        return 1.0 if self is CamClass.MANUFACTURABLE else -1.0


@dataclass
class CamVolume:
    values: np.ndarray  # (D, H, W), non-negative
    source_class: CamClass
    feature_dims: tuple[int, int, int]
    voxels_per_map: int

    def to_grid(self, spec: GridSpec) -> VoxelGrid:
        return VoxelGrid(spec, self.values[None].astype(np.float32))


def gradcam_map(activations: np.ndarray, gradients: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map weights and the rectified weighted sum for stacked feature maps.

    ``activations`` and ``gradients`` are (maps, D, H, W).  Returns
    (weights (maps,), map (D, H, W)).
    """
    a = np.asarray(activations, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    if a.shape != g.shape or a.ndim != 4:
        raise ValueError(f"activations {a.shape} and gradients {g.shape} must both be (maps, D, H, W)")
    z = int(np.prod(a.shape[1:]))
    weights = g.reshape(len(g), -1).sum(axis=1) / z
    cam = np.maximum(np.tensordot(weights, a, axes=1), 0.0)
    return weights, cam


def grad_cam(net: Network, x: np.ndarray, cls: CamClass, target_dims=None) -> CamVolume:
    """Class activation map of one input (C, D, H, W) at the last conv layer.

    With ``target_dims`` the map is resampled trilinearly to those dims.
    """
    cls = CamClass(cls)
    convs = net.conv_indices()
    if not convs:
        raise NoConvLayer("network has no convolution layer")
    last = convs[-1]
    h = net._check_input(x[None])
    acts = None
    for i, layer in enumerate(net.layers):
        h = layer.forward(h, train=False)
        if i == last:
            acts = h[0].copy()
    grads = net.backward(np.array([cls.logit_sign]), stop_at=last)[0]
    _, cam = gradcam_map(acts, grads)
    feature_dims = tuple(cam.shape)
    if target_dims is not None:
        cam = trilinear_resample(cam, target_dims)
    return CamVolume(cam, cls, feature_dims, int(np.prod(feature_dims)))


def _interp_axis(v: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = v.shape[axis]
    if n_in == n_out:
        return v
    if n_in == 1:
        return np.repeat(v, n_out, axis=axis)
    if n_out == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - i0
    shape = [1] * v.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    a = np.take(v, i0, axis=axis)
    b = np.take(v, i0 + 1, axis=axis)
    return a * (1.0 - frac) + b * frac


def trilinear_resample(volume: np.ndarray, target_dims) -> np.ndarray:
    """Corner-aligned trilinear resampling of a (D, H, W) volume."""
    v = np.asarray(volume, dtype=np.float64)
    for axis, n in enumerate(target_dims):
        v = _interp_axis(v, axis, int(n))
    return v


@dataclass
class CompositeVolume:
    spec: GridSpec
    occupancy: np.ndarray  # (D, H, W)
    activation: np.ndarray  # (D, H, W), max-normalized

    def to_grid(self) -> VoxelGrid:
        return VoxelGrid(self.spec, np.stack([self.occupancy, self.activation]).astype(np.float32))


def composite(occ: VoxelGrid, cam: CamVolume) -> CompositeVolume:
    if occ.channels != 1:
        raise ValueError("composite expects a single-channel occupancy grid")
    if tuple(cam.values.shape) != occ.spec.shape:
        raise SpecMismatch(f"activation dims {cam.values.shape} differ from occupancy dims {occ.spec.shape}")
    act = np.asarray(cam.values, dtype=np.float64)
    peak = act.max() if act.size else 0.0
    act = act / peak if peak > 0 else np.zeros_like(act)
    return CompositeVolume(occ.spec, occ.data[0].copy(), act)


# ---------------------------------------------------------------------------
# Rendering

# (position, RGB) stops of the fixed blue -> cyan -> red colormap
COLORMAP = ((0.0, (0, 0, 64)), (0.5, (0, 255, 255)), (1.0, (255, 32, 32)))

_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class RenderConfig:
    view_axis: str = "-z"
    image_size: tuple[int, int] | None = None  # (width, height); default: grid extent
    samples_per_ray: int | None = None  # default: twice the extent along the view axis
    occupancy_weight: float = 0.25
    activation_weight: float = 1.0

    def __post_init__(self):
        if self.view_axis not in ("+x", "-x", "+y", "-y", "+z", "-z"):
            raise ValueError(f"view axis must be one of +-x, +-y, +-z, got {self.view_axis!r}")


def view_frame(view_axis: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(forward, right, up) unit vectors of an orthographic camera looking along ``view_axis``."""
    forward = np.zeros(3)
    forward[_AXES[view_axis[1]]] = 1.0 if view_axis[0] == "+" else -1.0
    up = np.array([0.0, 1.0, 0.0]) if view_axis[1] == "z" else np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    return forward, right, up


def colormap(t: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to uint8 RGB; exact zeros map to black."""
    t = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
    xs = np.array([s[0] for s in COLORMAP])
    rgb = np.stack([np.interp(t, xs, [s[1][c] for s in COLORMAP]) for c in range(3)], axis=-1)
    out = np.floor(rgb + 0.5).astype(np.uint8)
    out[t == 0] = 0
    return out


def _sample(vol: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Trilinear samples of a (D, H, W) volume at index-space points (..., 3) in (x, y, z) order.

    Positions are clamped to the voxel-center range, so each voxel behaves
    as constant out to its cell boundary on the volume's faces.
    """
    dims = np.array(vol.shape[::-1])  # (nx, ny, nz)
    p = np.clip(pts, 0.0, dims - 1)
    i0 = np.minimum(np.floor(p).astype(int), np.maximum(dims - 2, 0))
    f = p - i0
    i1 = np.minimum(i0 + 1, dims - 1)
    out = np.zeros(pts.shape[:-1])
    for cz in (0, 1):
        z = i1[..., 2] if cz else i0[..., 2]
        wz = f[..., 2] if cz else 1.0 - f[..., 2]
        for cy in (0, 1):
            y = i1[..., 1] if cy else i0[..., 1]
            wy = f[..., 1] if cy else 1.0 - f[..., 1]
            for cx in (0, 1):
                x = i1[..., 0] if cx else i0[..., 0]
                wx = f[..., 0] if cx else 1.0 - f[..., 0]
                out += wz * wy * wx * vol[z, y, x]
    return out


def ray_sums(vol: CompositeVolume, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Per-pixel weighted sums of samples along orthographic rays, shape (height, width)."""
    forward, right, up = view_frame(cfg.view_axis)
    dims = np.array(vol.occupancy.shape[::-1], dtype=float)  # (nx, ny, nz)
    fa, ra, ua = (int(np.argmax(np.abs(v))) for v in (forward, right, up))
    width, height = cfg.image_size or (int(dims[ra]), int(dims[ua]))
    samples = cfg.samples_per_ray or int(2 * dims[fa])
    if samples < dims[fa]:
        raise ValueError("samples per ray must be at least the grid extent along the view axis")

    # continuous positions in voxel units (0 .. n along each axis), then index space
    u = (np.arange(width) + 0.5) / width * dims[ra]
    v = (np.arange(height) + 0.5) / height * dims[ua]
    t = (np.arange(samples) + 0.5) / samples * dims[fa]
    if right[ra] < 0:
        u = dims[ra] - u
    v = dims[ua] - v if up[ua] > 0 else v  # row 0 is the top of the image
    if forward[fa] < 0:
        t = dims[fa] - t
    pts = np.zeros((height, width, samples, 3))
    pts[..., ra] = u[None, :, None] - 0.5
    pts[..., ua] = v[:, None, None] - 0.5
    pts[..., fa] = t[None, None, :] - 0.5
    occ = _sample(vol.occupancy.astype(np.float64), pts).sum(axis=-1)
    act = _sample(vol.activation.astype(np.float64), pts).sum(axis=-1)
    return cfg.occupancy_weight * occ + cfg.activation_weight * act


def raymarch_render(vol: CompositeVolume, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """(height, width, 3) uint8 image of summed samples, normalized by the image maximum."""
    s = ray_sums(vol, cfg)
    peak = s.max() if s.size else 0.0
    return colormap(s / peak if peak > 0 else np.zeros_like(s))


def write_ppm(image: np.ndarray, path) -> None:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("image must be (height, width, 3)")
    h, w, _ = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM is supported")
    data = parts[4]
    return np.frombuffer(data[: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


# ---------------------------------------------------------------------------
# Localization


def localization(part: PartModel, spec: GridSpec, cam: np.ndarray, radius_factor: float = 2.0) -> tuple[float, float]:
    """(activation mass fraction, volume fraction) of voxels near a hole axis.

    "Near" means within ``radius_factor`` times the hole's diameter of its
    axis segment; with several holes, any hole counts.
    """
    cam = np.asarray(cam, dtype=np.float64)
    if cam.shape != spec.shape:
        raise SpecMismatch(f"activation dims {cam.shape} differ from grid {spec.shape}")
    pts = spec.center_points().reshape(-1, 3)
    near = np.zeros(len(pts), dtype=bool)
    for hole, g in zip(part.holes, part.hole_geometry):
        single = PartModel(part.id, part.base, (hole,))
        near |= distance_to_nearest_hole_axis(single, pts) <= radius_factor * g.diameter
    mass = cam.reshape(-1)
    total = mass.sum()
    frac = float(mass[near].sum() / total) if total > 0 else 0.0
    return frac, float(near.mean())
