"""Sequential 3D CNN with a sigmoid output, plus checkpoint IO."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .layers import BatchNorm3d, Conv3d, Dense, Flatten, Layer, MaxPool3d, ShapeMismatch, layer_from_config

NET_MAGIC = b"VDFM-NET/1"

# kernel sizes of the three conv layers per input encoding
OCCUPANCY_KERNELS = (8, 4, 2)
NORMAL_KERNELS = (6, 3, 2)


class FormatError(ValueError):
    pass


class NoConvLayer(ValueError):
    pass


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Network:
    """Ordered layer stack mapping (N, C, D, H, W) inputs to one logit per sample.

    The last layer must be a linear ``Dense`` with a single unit; ``predict``
    applies the sigmoid.
    """

    def __init__(self, input_shape: Sequence[int], layers: Sequence[Layer], dtype=np.float32):
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if shape != (1,):
            raise ShapeMismatch(f"network must end in a single unit, ends in {shape}")
        for layer in self.layers:
            layer.astype(self.dtype)

    # -- parameters ------------------------------------------------------

    def init(self, seed: int) -> "Network":
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if hasattr(layer, "init"):
                layer.init(rng, self.dtype)
        return self

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{k}", v) for i, layer in enumerate(self.layers) for k, v in layer.params.items()]

    def gradients(self) -> list[np.ndarray]:
        return [layer.grads[k] for layer in self.layers for k in layer.params]

    def state(self) -> list[np.ndarray]:
        """Copies of all parameters and running statistics, in a fixed order."""
        out = []
        for layer in self.layers:
            out += [v.copy() for v in layer.params.values()]
            out += [v.copy() for v in layer.buffers.values()]
        return out

    def load_state(self, arrays: Sequence[np.ndarray]) -> None:
        it = iter(arrays)
        for layer in self.layers:
            for d in (layer.params, layer.buffers):
                for k in d:
                    a = next(it)
                    if a.shape != d[k].shape:
                        raise ShapeMismatch(f"state tensor for {k} has shape {a.shape}, expected {d[k].shape}")
                    d[k] = a.astype(self.dtype, copy=True)

    def astype(self, dtype) -> "Network":
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            layer.astype(self.dtype)
        return self

    def config(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [layer.config() for layer in self.layers]}

    # -- passes ----------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 5 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatch(f"network expects (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        return x.astype(self.dtype, copy=False)

    def logits(self, x: np.ndarray, train: bool = False, stop_at: int | None = None) -> np.ndarray:
        """Run layers in order; with ``stop_at`` return that layer's output instead."""
        h = self._check_input(x)
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, train)
            if i == stop_at:
                return h
        return h[:, 0]

    def predict(self, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
        out = [sigmoid(self.logits(x[i:i + batch_size])) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, self.dtype)

    def backward(self, dlogits: np.ndarray, stop_at: int | None = None) -> np.ndarray | None:
        """Backpropagate d(loss)/d(logit) through the cached forward pass.

        Fills every layer's ``grads``.  With ``stop_at`` the pass ends after
        producing the gradient with respect to that layer's output.
        """
        g = np.asarray(dlogits, dtype=self.dtype).reshape(-1, 1)
        for i in range(len(self.layers) - 1, -1, -1):
            if i == stop_at:
                return g
            g = self.layers[i].backward(g, need_input_grad=i > 0)
        return None

    def conv_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Conv3d)]


def build_network(
    input_shape: Sequence[int],
    kernels: Sequence[int] = NORMAL_KERNELS,
    filters: Sequence[int] = (8, 16, 32),
    dense: int = 128,
    seed: int = 0,
    dtype=np.float32,
    bn_momentum: float = 0.9,
    bn_eps: float = 1e-3,
) -> Network:
    """conv-BN-pool, conv-BN, conv-BN-pool, dense, single logit.

    Each conv applies ReLU before its batch normalization.
    """
    if len(kernels) != len(filters):
        raise ValueError("one kernel size per conv layer")
    layers: list[Layer] = []
    c = input_shape[0]
    last = len(kernels) - 1
    for i, (k, f) in enumerate(zip(kernels, filters)):
        layers.append(Conv3d(c, f, k))
        layers.append(BatchNorm3d(f, bn_momentum, bn_eps))
        if i == 0 or i == last:
            layers.append(MaxPool3d())
        c = f
    shape = tuple(input_shape)
    for layer in layers:
        shape = layer.output_shape(shape)
    layers += [Flatten(), Dense(int(np.prod(shape)), dense), Dense(dense, 1, relu=False)]
    return Network(input_shape, layers, dtype).init(seed)


def first_layer_feature_maps(net: Network, x: np.ndarray) -> np.ndarray:
    """First conv layer's activations for one input, each map scaled to max 1."""
    idx = net.conv_indices()
    if not idx:
        raise NoConvLayer("network has no convolution layer")
    a = net.logits(x[None] if x.ndim == 4 else x, stop_at=idx[0])[0]
    peak = a.reshape(len(a), -1).max(axis=1)
    scale = np.where(peak > 0, peak, 1.0)
    return a / scale[:, None, None, None]


# ---------------------------------------------------------------------------
# Checkpoints


def save_network(net: Network, path) -> None:
    """magic, u32 header length, JSON architecture header, raw little-endian tensors."""
    state = net.state()
    header = {
        "architecture": net.config(),
        "dtype": "f8" if net.dtype == np.float64 else "f4",
        "tensors": [list(a.shape) for a in state],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    dt = "<" + header["dtype"]
    payload = b"".join(np.ascontiguousarray(a, dtype=dt).tobytes() for a in state)
    Path(path).write_bytes(NET_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + payload)


def load_network(path, expect_architecture: dict | None = None) -> Network:
    raw = Path(path).read_bytes()
    n = len(NET_MAGIC)
    if len(raw) < n + 4 or raw[:n] != NET_MAGIC:
        raise FormatError(f"{path}: not a network checkpoint")
    (hlen,) = struct.unpack_from("<I", raw, n)
    try:
        header = json.loads(raw[n + 4:n + 4 + hlen])
        arch = header["architecture"]
        dtype = {"f4": np.float32, "f8": np.float64}[header["dtype"]]
        shapes = [tuple(s) for s in header["tensors"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    if expect_architecture is not None and expect_architecture != arch:
        raise FormatError(f"{path}: architecture does not match the expected one")
    try:
        layers = [layer_from_config(c) for c in arch["layers"]]
        net = Network(arch["input_shape"], layers, dtype)
    except (KeyError, TypeError, ShapeMismatch) as exc:
        raise FormatError(f"{path}: invalid architecture") from exc
    offset = n + 4 + hlen
    item = np.dtype(dtype).itemsize
    arrays = []
    for s in shapes:
        count = int(np.prod(s))
        end = offset + count * item
        if end > len(raw):
            raise FormatError(f"{path}: truncated tensor data")
        arrays.append(np.frombuffer(raw, dtype="<" + ("f8" if dtype is np.float64 else "f4"), count=count, offset=offset).reshape(s))
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: trailing bytes after tensors")
    try:
        net.load_state(arrays)
    except (ShapeMismatch, StopIteration) as exc:
        raise FormatError(f"{path}: tensors do not fit the architecture") from exc
    if len(arrays) != len(net.state()):
        raise FormatError(f"{path}: tensor count does not match the architecture")
    return net
