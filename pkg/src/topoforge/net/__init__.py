from .layers import (
    LayerSpec,
    batch_norm,
    conv,
    conv_transpose,
    dense,
    dropout,
    leaky_relu,
    reshape,
    tanh,
)
from .network import Network, clip_weights, rmsprop_step
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "LayerSpec", "Network", "batch_norm", "conv", "conv_transpose", "dense",
    "dropout", "leaky_relu", "reshape", "tanh", "clip_weights", "rmsprop_step",
    "load_checkpoint", "save_checkpoint",
]
