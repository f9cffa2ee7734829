"""Sequential network with cached reverse-mode gradients, RMSProp and clipping."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import NumericError, ParameterError, ShapeError, StateError
from .layers import LayerSpec, build_layer


class Network:
    """Fixed chain of layers. Parameters train in the network dtype
    (float32 by default; float64 for gradient-check work)."""

    def __init__(self, specs: Sequence[LayerSpec], seed: int = 0, dtype=np.float32):
        self.specs = list(specs)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers = [build_layer(s, rng, self.dtype) for s in self.specs]
        self.opt_state: dict[str, np.ndarray] = {}
        self._ran_forward = False

    def forward(self, x: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, training, rng)
            except (ShapeError, ValueError) as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from exc
        self._ran_forward = True
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if not self._ran_forward:
            raise StateError("backward called before forward")
        dy = np.asarray(dy, dtype=self.dtype)
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                out.append((f"{i}.{name}", arr))
        return out

    def gradients(self) -> list[np.ndarray]:
        out = []
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                if name not in layer.grads:
                    raise StateError(f"layer {i} has no gradient for {name!r}; run backward first")
                out.append(layer.grads[name])
        return out

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.state.items():
                out.append((f"{i}.{name}", arr))
        return out

    def set_param(self, name: str, value: np.ndarray) -> None:
        idx, pname = name.split(".", 1)
        layer = self.layers[int(idx)]
        target = layer.params if pname in layer.params else layer.state
        if target[pname].shape != value.shape:
            raise ShapeError(f"{name}: shape {value.shape} != {target[pname].shape}")
        target[pname] = value.astype(self.dtype)


def rmsprop_step(
    net: Network,
    grads: Optional[list[np.ndarray]] = None,
    lr: float = 5e-5,
    decay: float = 0.9,
    epsilon: float = 1e-8,
) -> None:
    """s <- decay*s + (1-decay)*g^2;  p <- p - lr*g/sqrt(s + epsilon)."""
    if lr <= 0:
        raise ParameterError(f"lr must be > 0, got {lr}")
    params = net.parameters()
    if grads is None:
        grads = net.gradients()
    if len(grads) != len(params):
        raise ShapeError(f"got {len(grads)} gradients for {len(params)} parameters")
    one_minus = net.dtype.type(1.0 - decay)
    decay_t = net.dtype.type(decay)
    lr_t = net.dtype.type(lr)
    eps_t = net.dtype.type(epsilon)
    for (name, p), g in zip(params, grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
        g = np.asarray(g, dtype=net.dtype)
        s = net.opt_state.get(name)
        if s is None:
            s = np.zeros_like(p)
            net.opt_state[name] = s
        s *= decay_t
        s += one_minus * g * g
        p -= lr_t * g / np.sqrt(s + eps_t)


def clip_weights(net: Network, c: float) -> None:
    """Clamp every parameter into [-c, c]; in-range values are untouched."""
    if c <= 0:
        raise ParameterError(f"clip bound must be > 0, got {c}")
    for _, p in net.parameters():
        np.clip(p, -c, c, out=p)
