"""Layer set for the fixed-chain network engine.

All image tensors are NCHW. Convolution and its transpose share the same
im2col/col2im kernels: the transpose's forward is the convolution's input
gradient and vice versa, so one pair of patch routines covers all four maps.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Any, Optional

import numpy as np

from ..errors import ConfigError, ParameterError, ShapeError, StateError

LAYER_KINDS = (
    "conv", "conv_transpose", "dense", "batch_norm", "dropout",
    "leaky_relu", "tanh", "reshape",
)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    options: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "options": dict(self.options)}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(kind=d["kind"], options=dict(d.get("options", {})))


def conv(in_channels, out_channels, kernel=4, stride=2, padding=1) -> LayerSpec:
    return LayerSpec("conv", dict(in_channels=in_channels, out_channels=out_channels,
                                  kernel=kernel, stride=stride, padding=padding))


def conv_transpose(in_channels, out_channels, kernel=4, stride=2, padding=1) -> LayerSpec:
    return LayerSpec("conv_transpose", dict(in_channels=in_channels, out_channels=out_channels,
                                            kernel=kernel, stride=stride, padding=padding))


def dense(in_features, out_features) -> LayerSpec:
    return LayerSpec("dense", dict(in_features=in_features, out_features=out_features))


def batch_norm(channels, momentum=0.99, epsilon=1e-5) -> LayerSpec:
    return LayerSpec("batch_norm", dict(channels=channels, momentum=momentum, epsilon=epsilon))


def dropout(rate) -> LayerSpec:
    return LayerSpec("dropout", dict(rate=rate))


def leaky_relu(alpha=0.2) -> LayerSpec:
    return LayerSpec("leaky_relu", dict(alpha=alpha))


def tanh() -> LayerSpec:
    return LayerSpec("tanh", {})


def reshape(shape) -> LayerSpec:
    return LayerSpec("reshape", dict(shape=list(shape)))


WEIGHT_INIT_STD = 0.02


def _out_size(size: int, k: int, s: int, p: int) -> int:
    return (size + 2 * p - k) // s + 1


def _im2col(x: np.ndarray, k: int, s: int, p: int, oh: int, ow: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, oh*ow) patch matrix."""
    n, c = x.shape[:2]
    if p > 0:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i: i + s * oh: s, j: j + s * ow: s]
    return cols.reshape(n, c * k * k, oh * ow)


def _col2im(cols: np.ndarray, k: int, s: int, p: int, h: int, w: int,
            oh: int, ow: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back to (N, C, H, W)."""
    n = cols.shape[0]
    c = cols.shape[1] // (k * k)
    cols = cols.reshape(n, c, k, k, oh, ow)
    out = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i: i + s * oh: s, j: j + s * ow: s] += cols[:, :, i, j]
    if p > 0:
        return out[:, :, p:-p, p:-p]
    return out


class Layer:
    """Base: owns params/grads/state dicts and a cached forward."""

    kind = "?"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        self._cache: Optional[Any] = None

    def forward(self, x: np.ndarray, training: bool, rng) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        return self._cache


class Dense(Layer):
    kind = "dense"

    def __init__(self, opts, rng, dtype):
        super().__init__()
        din, dout = opts["in_features"], opts["out_features"]
        self.params["w"] = rng.normal(0.0, WEIGHT_INIT_STD, (din, dout)).astype(dtype)
        self.params["b"] = np.zeros(dout, dtype=dtype)

    def forward(self, x, training, rng):
        if x.ndim != 2 or x.shape[1] != self.params["w"].shape[0]:
            raise ShapeError(
                f"dense expects (N, {self.params['w'].shape[0]}), got {x.shape}"
            )
        self._cache = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy):
        x = self._need_cache()
        self.grads["w"] = x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["w"].T


class Conv(Layer):
    kind = "conv"

    def __init__(self, opts, rng, dtype):
        super().__init__()
        self.cin, self.cout = opts["in_channels"], opts["out_channels"]
        self.k, self.s, self.p = opts["kernel"], opts["stride"], opts["padding"]
        self.params["w"] = rng.normal(
            0.0, WEIGHT_INIT_STD, (self.cout, self.cin, self.k, self.k)
        ).astype(dtype)
        self.params["b"] = np.zeros(self.cout, dtype=dtype)

    def forward(self, x, training, rng):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ShapeError(f"conv expects (N, {self.cin}, H, W), got {x.shape}")
        n, _, h, w = x.shape
        oh, ow = _out_size(h, self.k, self.s, self.p), _out_size(w, self.k, self.s, self.p)
        if oh < 1 or ow < 1:
            raise ShapeError(f"conv output would be empty for input {x.shape}")
        cols = _im2col(x, self.k, self.s, self.p, oh, ow)
        w2 = self.params["w"].reshape(self.cout, -1)
        y = np.matmul(w2, cols) + self.params["b"][:, None]
        self._cache = (cols, x.shape, (oh, ow))
        return y.reshape(n, self.cout, oh, ow)

    def backward(self, dy):
        cols, x_shape, (oh, ow) = self._need_cache()
        n = x_shape[0]
        dyf = dy.reshape(n, self.cout, oh * ow)
        self.grads["w"] = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(
            self.params["w"].shape
        )
        self.grads["b"] = dyf.sum(axis=(0, 2))
        w2 = self.params["w"].reshape(self.cout, -1)
        dcols = np.matmul(w2.T, dyf)
        return _col2im(dcols, self.k, self.s, self.p, x_shape[2], x_shape[3], oh, ow)


class ConvTranspose(Layer):
    kind = "conv_transpose"

    def __init__(self, opts, rng, dtype):
        super().__init__()
        self.cin, self.cout = opts["in_channels"], opts["out_channels"]
        self.k, self.s, self.p = opts["kernel"], opts["stride"], opts["padding"]
        self.params["w"] = rng.normal(
            0.0, WEIGHT_INIT_STD, (self.cin, self.cout, self.k, self.k)
        ).astype(dtype)
        self.params["b"] = np.zeros(self.cout, dtype=dtype)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return ((h - 1) * self.s - 2 * self.p + self.k,
                (w - 1) * self.s - 2 * self.p + self.k)

    def forward(self, x, training, rng):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ShapeError(f"conv_transpose expects (N, {self.cin}, H, W), got {x.shape}")
        n, _, hi, wi = x.shape
        ho, wo = self.out_hw(hi, wi)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv_transpose output would be empty for input {x.shape}")
        xf = x.reshape(n, self.cin, hi * wi)
        w2 = self.params["w"].reshape(self.cin, -1)
        cols = np.matmul(w2.T, xf)
        y = _col2im(cols, self.k, self.s, self.p, ho, wo, hi, wi)
        y += self.params["b"][None, :, None, None]
        self._cache = (xf, (hi, wi), (ho, wo))
        return y

    def backward(self, dy):
        xf, (hi, wi), (ho, wo) = self._need_cache()
        dcols = _im2col(dy, self.k, self.s, self.p, hi, wi)
        w2 = self.params["w"].reshape(self.cin, -1)
        self.grads["w"] = np.matmul(xf, dcols.transpose(0, 2, 1)).sum(axis=0).reshape(
            self.params["w"].shape
        )
        self.grads["b"] = dy.sum(axis=(0, 2, 3))
        dx = np.matmul(w2, dcols)
        return dx.reshape(xf.shape[0], self.cin, hi, wi)


class BatchNorm(Layer):
    kind = "batch_norm"

    def __init__(self, opts, rng, dtype):
        super().__init__()
        c = opts["channels"]
        self.momentum = opts.get("momentum", 0.99)
        self.eps = opts.get("epsilon", 1e-5)
        self.params["gamma"] = np.ones(c, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self.state["running_mean"] = np.zeros(c, dtype=dtype)
        self.state["running_var"] = np.ones(c, dtype=dtype)

    def _axes_bshape(self, x):
        c = self.params["gamma"].shape[0]
        if x.ndim == 4:
            if x.shape[1] != c:
                raise ShapeError(f"batch_norm expects {c} channels, got {x.shape}")
            return (0, 2, 3), (1, c, 1, 1)
        if x.ndim == 2:
            if x.shape[1] != c:
                raise ShapeError(f"batch_norm expects (N, {c}), got {x.shape}")
            return (0,), (1, c)
        raise ShapeError(f"batch_norm expects 2D or 4D input, got {x.shape}")

    def forward(self, x, training, rng):
        axes, bshape = self._axes_bshape(x)
        gamma = self.params["gamma"].reshape(bshape)
        beta = self.params["beta"].reshape(bshape)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
            m = self.momentum
            self.state["running_mean"] = (m * self.state["running_mean"]
                                          + (1 - m) * mean).astype(x.dtype)
            self.state["running_var"] = (m * self.state["running_var"]
                                         + (1 - m) * var).astype(x.dtype)
            self._cache = ("train", xhat, inv_std, axes, bshape)
        else:
            inv_std = 1.0 / np.sqrt(self.state["running_var"] + self.eps)
            xhat = (x - self.state["running_mean"].reshape(bshape)) * inv_std.reshape(bshape)
            self._cache = ("infer", xhat, inv_std, axes, bshape)
        return gamma * xhat + beta

    def backward(self, dy):
        mode, xhat, inv_std, axes, bshape = self._need_cache()
        gamma = self.params["gamma"].reshape(bshape)
        self.grads["gamma"] = (dy * xhat).sum(axis=axes)
        self.grads["beta"] = dy.sum(axis=axes)
        dxhat = dy * gamma
        if mode == "infer":
            return dxhat * inv_std.reshape(bshape)
        m = dy.size / dy.shape[1] if dy.ndim == 4 else dy.shape[0]
        term = (m * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        return term * inv_std.reshape(bshape) / m


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, opts, rng, dtype):
        super().__init__()
        self.rate = float(opts["rate"])
        if not 0 <= self.rate < 1:
            raise ParameterError(f"dropout rate must be in [0, 1), got {self.rate}")

    def forward(self, x, training, rng):
        if not training or self.rate == 0.0:
            self._cache = ("identity",)
            return x
        if rng is None:
            rng = np.random.default_rng()
        # inverted dropout: E[output] = input
        mask = (rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        self._cache = ("masked", mask)
        return x * mask

    def backward(self, dy):
        cache = self._need_cache()
        if cache[0] == "identity":
            return dy
        return dy * cache[1]


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, opts, rng, dtype):
        super().__init__()
        self.alpha = float(opts.get("alpha", 0.2))

    def forward(self, x, training, rng):
        pos = x > 0
        self._cache = pos
        return np.where(pos, x, self.alpha * x)

    def backward(self, dy):
        pos = self._need_cache()
        return np.where(pos, dy, self.alpha * dy)


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x, training, rng):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._need_cache()
        return dy * (1.0 - y * y)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, opts, rng, dtype):
        super().__init__()
        self.shape = tuple(opts["shape"])

    def forward(self, x, training, rng):
        if x[0].size != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape per-sample size {x[0].size} to {self.shape}")
        self._cache = x.shape
        return x.reshape(x.shape[0], *self.shape)

    def backward(self, dy):
        return dy.reshape(self._need_cache())


_LAYER_CLASSES = {
    "dense": Dense,
    "conv": Conv,
    "conv_transpose": ConvTranspose,
    "batch_norm": BatchNorm,
    "dropout": Dropout,
    "leaky_relu": LeakyReLU,
    "tanh": Tanh,
    "reshape": Reshape,
}


def build_layer(spec: LayerSpec, rng, dtype) -> Layer:
    cls = _LAYER_CLASSES[spec.kind]
    if spec.kind in ("tanh",):
        return cls()
    return cls(spec.options, rng, dtype)
