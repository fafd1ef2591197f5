"""Layers with hand-written forward and backward passes.

Tensors are numpy arrays laid out (batch, channel, z, y, x).  Every layer
keeps whatever it needs from the last forward call and, on ``backward``,
stores parameter gradients in ``self.grads`` (same keys as ``self.params``)
and returns the gradient with respect to its input.
"""

from __future__ import annotations

import numpy as np
from scipy import fft as sfft


class ShapeMismatch(ValueError):
    pass


class DegenerateBatch(ValueError):
    pass


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def config(self) -> dict:
        return {"type": self.kind}

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray, need_input_grad: bool = True) -> np.ndarray | None:
        raise NotImplementedError

    def astype(self, dtype) -> None:
        for d in (self.params, self.buffers):
            for k in d:
                d[k] = d[k].astype(dtype)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# Convolution


def conv_padding(k: int) -> tuple[int, int]:
    lo = (k - 1) // 2
    return lo, k - 1 - lo


class Conv3d(Layer):
    """Stride-1 zero-padded cross-correlation plus bias, followed by ReLU.

    Two exact evaluation routes: real FFTs on a lattice large enough that
    circular wrap never reaches a retained output (cheap for large kernels),
    and an unfolded-patch matrix product (cheap for small ones).
    """

    kind = "conv3d"
    # largest kernel evaluated through patch matrices when method == "auto"
    DIRECT_MAX_KERNEL = 2

    def __init__(self, in_channels: int, out_channels: int, kernel: int, relu: bool = True, method: str = "auto"):
        super().__init__()
        if min(in_channels, out_channels, kernel) < 1:
            raise ValueError("channels and kernel size must be positive")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.relu = relu
        if method not in ("auto", "fft", "direct"):
            raise ValueError(f"unknown convolution method {method!r}")
        self.method = method
        k = kernel
        self.params = {
            "weight": np.zeros((out_channels, in_channels, k, k, k), np.float32),
            "bias": np.zeros(out_channels, np.float32),
        }

    def config(self) -> dict:
        return {
            "type": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": self.kernel,
            "relu": self.relu,
        }

    def init(self, rng: np.random.Generator, dtype) -> None:
        k3 = self.kernel**3
        self.params["weight"] = glorot_uniform(
            rng, self.params["weight"].shape, self.in_channels * k3, self.out_channels * k3, dtype
        )
        self.params["bias"] = np.zeros(self.out_channels, dtype)

    def output_shape(self, shape):
        if shape[0] != self.in_channels:
            raise ShapeMismatch(f"conv expects {self.in_channels} channels, got {shape[0]}")
        return (self.out_channels, *shape[1:])

    @property
    def uses_fft(self) -> bool:
        if self.method == "auto":
            return self.kernel > self.DIRECT_MAX_KERNEL
        return self.method == "fft"

    def _lattice(self, dims) -> tuple[int, ...]:
        # wrap-free as long as the lattice exceeds the extent by the larger pad
        return tuple(sfft.next_fast_len(d + max(conv_padding(self.kernel)), real=True) for d in dims)

    def _kernel_spectrum(self, S) -> np.ndarray:
        # Place tap t of each axis at index (lo - t) mod S so that a circular
        # convolution with the input realizes the padded cross-correlation.
        k = self.kernel
        lo, hi = conv_padding(k)
        w = self.params["weight"][:, :, ::-1, ::-1, ::-1]
        buf = np.zeros((self.out_channels, self.in_channels, *S), dtype=w.dtype)
        buf[:, :, :k, :k, :k] = w
        buf = np.roll(buf, shift=(-hi, -hi, -hi), axis=(2, 3, 4))
        return sfft.rfftn(buf, s=S, axes=(2, 3, 4))

    @staticmethod
    def _mix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Per-frequency matrix product: (P, Q, F) x (Q, R, F) -> (P, R, F)."""
        F = a.shape[2:]
        am = a.reshape(a.shape[0], a.shape[1], -1).transpose(2, 0, 1)
        bm = b.reshape(b.shape[0], b.shape[1], -1).transpose(2, 0, 1)
        out = np.matmul(am, bm)
        return out.transpose(1, 2, 0).reshape(a.shape[0], b.shape[1], *F)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 5 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"conv expects (N, {self.in_channels}, D, H, W), got {x.shape}")
        y = self._forward_fft(x) if self.uses_fft else self._forward_direct(x)
        y = y + self.params["bias"][None, :, None, None, None]
        y = y.astype(x.dtype, copy=False)
        if self.relu:
            y = np.maximum(y, 0)
        self._out = y if self.relu else None
        return y

    def backward(self, g: np.ndarray, need_input_grad: bool = True):
        if self.relu:
            g = g * (self._out > 0)
        self.grads["bias"] = g.sum(axis=(0, 2, 3, 4)).astype(g.dtype)
        if self.uses_fft:
            return self._backward_fft(g, need_input_grad)
        return self._backward_direct(g, need_input_grad)

    # patch-matrix route -------------------------------------------------

    def _forward_direct(self, x: np.ndarray) -> np.ndarray:
        n, c, d, h, w = x.shape
        k = self.kernel
        lo, hi = conv_padding(k)
        xp = np.pad(x.transpose(0, 2, 3, 4, 1), ((0, 0), (lo, hi), (lo, hi), (lo, hi), (0, 0)))
        # (n, d, h, w, c, kz, ky, kx) view, copied into rows of c*k^3 taps
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))
        cols = win.reshape(n * d * h * w, c * k**3)
        wm = self.params["weight"].reshape(self.out_channels, -1).T
        self._cache = (cols, x.shape)
        return (cols @ wm).reshape(n, d, h, w, self.out_channels).transpose(0, 4, 1, 2, 3)

    def _backward_direct(self, g: np.ndarray, need_input_grad: bool):
        cols, shape = self._cache
        n, c, d, h, w = shape
        k = self.kernel
        lo, hi = conv_padding(k)
        o = self.out_channels
        gl = g.transpose(0, 2, 3, 4, 1)
        gm = gl.reshape(-1, o)
        self.grads["weight"] = (gm.T @ cols).reshape(self.params["weight"].shape).astype(g.dtype)
        if not need_input_grad:
            return None
        # input gradient: valid correlation of the (hi, lo)-padded output
        # gradient with the spatially flipped, channel-transposed kernel
        gp = np.pad(gl, ((0, 0), (hi, lo), (hi, lo), (hi, lo), (0, 0)))
        gcols = np.lib.stride_tricks.sliding_window_view(gp, (k, k, k), axis=(1, 2, 3)).reshape(n * d * h * w, o * k**3)
        wf = self.params["weight"][:, :, ::-1, ::-1, ::-1].transpose(0, 2, 3, 4, 1).reshape(o * k**3, c)
        return (gcols @ wf).reshape(n, d, h, w, c).transpose(0, 4, 1, 2, 3)

    # FFT route ------------------------------------------------------------

    def _forward_fft(self, x: np.ndarray) -> np.ndarray:
        dims = x.shape[2:]
        S = self._lattice(dims)
        xf = sfft.rfftn(x, s=S, axes=(2, 3, 4))
        kf = self._kernel_spectrum(S)
        yf = self._mix(xf, kf.transpose(1, 0, 2, 3, 4))
        self._cache = (xf, kf, dims, S)
        return sfft.irfftn(yf, s=S, axes=(2, 3, 4))[:, :, : dims[0], : dims[1], : dims[2]]

    def _backward_fft(self, g: np.ndarray, need_input_grad: bool):
        xf, kf, dims, S = self._cache
        k = self.kernel
        lo, _ = conv_padding(k)
        gf = sfft.rfftn(g, s=S, axes=(2, 3, 4))
        # weight gradient: correlation of input with output gradient
        rf = self._mix(np.conj(gf).transpose(1, 0, 2, 3, 4), xf)  # (out, in, F)
        r = sfft.irfftn(rf, s=S, axes=(2, 3, 4))
        r = np.roll(r, shift=(lo, lo, lo), axis=(2, 3, 4))[:, :, :k, :k, :k]
        self.grads["weight"] = r.astype(g.dtype)
        if not need_input_grad:
            return None
        gxf = self._mix(gf, np.conj(kf))
        gx = sfft.irfftn(gxf, s=S, axes=(2, 3, 4))[:, :, : dims[0], : dims[1], : dims[2]]
        return gx.astype(g.dtype)


# ---------------------------------------------------------------------------
# Normalization


class BatchNorm3d(Layer):
    kind = "batchnorm"

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-3):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params = {"gamma": np.ones(channels, np.float32), "beta": np.zeros(channels, np.float32)}
        self.buffers = {"mean": np.zeros(channels, np.float32), "var": np.ones(channels, np.float32)}

    def config(self) -> dict:
        return {"type": self.kind, "channels": self.channels, "momentum": self.momentum, "eps": self.eps}

    def init(self, rng, dtype) -> None:
        self.astype(dtype)

    def output_shape(self, shape):
        if shape[0] != self.channels:
            raise ShapeMismatch(f"batchnorm expects {self.channels} channels, got {shape[0]}")
        return shape

    @staticmethod
    def _bc(v):
        return v[None, :, None, None, None]

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 5 or x.shape[1] != self.channels:
            raise ShapeMismatch(f"batchnorm expects (N, {self.channels}, ...), got {x.shape}")
        gamma, beta = self.params["gamma"], self.params["beta"]
        if train:
            if x.shape[0] < 2:
                raise DegenerateBatch("batch normalization needs at least 2 samples in training")
            mean = x.mean(axis=(0, 2, 3, 4))
            var = x.var(axis=(0, 2, 3, 4))
            m = self.momentum
            self.buffers["mean"] = (m * self.buffers["mean"] + (1 - m) * mean).astype(x.dtype)
            self.buffers["var"] = (m * self.buffers["var"] + (1 - m) * var).astype(x.dtype)
        else:
            mean, var = self.buffers["mean"], self.buffers["var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bc(mean)) * self._bc(inv)
        self._cache = (xhat, inv, train)
        return (xhat * self._bc(gamma) + self._bc(beta)).astype(x.dtype, copy=False)

    def backward(self, g: np.ndarray, need_input_grad: bool = True):
        xhat, inv, train = self._cache
        axes = (0, 2, 3, 4)
        self.grads["gamma"] = (g * xhat).sum(axis=axes).astype(g.dtype)
        self.grads["beta"] = g.sum(axis=axes).astype(g.dtype)
        if not need_input_grad:
            return None
        gxhat = g * self._bc(self.params["gamma"])
        if not train:
            return (gxhat * self._bc(inv)).astype(g.dtype)
        m = g.size // g.shape[1]
        gx = (
            self._bc(inv / m)
            * (m * gxhat - self._bc(gxhat.sum(axis=axes)) - xhat * self._bc((gxhat * xhat).sum(axis=axes)))
        )
        return gx.astype(g.dtype)


# ---------------------------------------------------------------------------
# Pooling, reshaping, dense


class MaxPool3d(Layer):
    """Non-overlapping 2x2x2 max pooling.

    Odd extents are padded on the high side with -inf so every output cell
    has a full window.  Ties go to the lowest linear index inside the window.
    """

    kind = "maxpool"

    def output_shape(self, shape):
        return (shape[0], *((d + 1) // 2 for d in shape[1:]))

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        n, c, d, h, w = x.shape
        D, H, W = (d + 1) // 2, (h + 1) // 2, (w + 1) // 2
        if (d, h, w) != (2 * D, 2 * H, 2 * W):
            xp = np.full((n, c, 2 * D, 2 * H, 2 * W), -np.inf, dtype=x.dtype)
            xp[:, :, :d, :h, :w] = x
        else:
            xp = x
        # window-local index = dz*4 + dy*2 + dx, lowest first
        win = xp.reshape(n, c, D, 2, H, 2, W, 2).transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(n, c, D, H, W, 8)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, arg)
        return out

    def backward(self, g: np.ndarray, need_input_grad: bool = True):
        shape, arg = self._cache
        n, c, d, h, w = shape
        D, H, W = arg.shape[2:]
        win = np.zeros((n, c, D, H, W, 8), dtype=g.dtype)
        np.put_along_axis(win, arg[..., None], g[..., None], axis=-1)
        full = win.reshape(n, c, D, H, W, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7).reshape(n, c, 2 * D, 2 * H, 2 * W)
        return full[:, :, :d, :h, :w]


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g, need_input_grad=True):
        return g.reshape(self._shape)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, out_features: int, relu: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.relu = relu
        self.params = {
            "weight": np.zeros((in_features, out_features), np.float32),
            "bias": np.zeros(out_features, np.float32),
        }

    def config(self) -> dict:
        return {"type": self.kind, "in_features": self.in_features, "out_features": self.out_features, "relu": self.relu}

    def init(self, rng, dtype) -> None:
        self.params["weight"] = glorot_uniform(
            rng, (self.in_features, self.out_features), self.in_features, self.out_features, dtype
        )
        self.params["bias"] = np.zeros(self.out_features, dtype)

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ShapeMismatch(f"dense expects {self.in_features} features, got {shape}")
        return (self.out_features,)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"dense expects (N, {self.in_features}), got {x.shape}")
        y = x @ self.params["weight"] + self.params["bias"]
        if self.relu:
            y = np.maximum(y, 0)
        self._cache = (x, y if self.relu else None)
        return y

    def backward(self, g, need_input_grad=True):
        x, y = self._cache
        if self.relu:
            g = g * (y > 0)
        self.grads["weight"] = x.T @ g
        self.grads["bias"] = g.sum(axis=0)
        if not need_input_grad:
            return None
        return g @ self.params["weight"].T


LAYER_TYPES = {cls.kind: cls for cls in (Conv3d, BatchNorm3d, MaxPool3d, Flatten, Dense)}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("type")
    return LAYER_TYPES[kind](**cfg)
