"""Cleanup of raw generator output: hard threshold, then Gaussian smoothing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .fem import DensityField


@dataclass(frozen=True)
class PostprocessConfig:
    threshold: float = 0.5
    kernel_size: int = 5
    sigma: float = 1.0

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ParameterError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ParameterError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")


def threshold(field: DensityField, t: float = 0.5) -> DensityField:
    """Round densities to {0, 1}: strictly above t -> 1, otherwise 0."""
    return DensityField(field.nelx, field.nely, (field.values > t).astype(np.float64))


def gaussian_kernel_1d(kernel_size: int, sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian weights centered on the middle tap."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ParameterError(f"kernel_size must be odd and >= 1, got {kernel_size}")
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    half = kernel_size // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-0.5 * (offsets / sigma) ** 2)
    return w / w.sum()


def gaussian_smooth(field: DensityField, kernel_size: int = 5, sigma: float = 1.0) -> DensityField:
    """Bivariate Gaussian blur with reflect padding at the borders.

    Evaluated as v + sum_ij w_ij (shifted_ij - v), which is algebraically the
    normalized convolution but preserves constant fields bitwise; the final
    clip keeps the convex-combination bounds exact."""
    w = gaussian_kernel_1d(kernel_size, sigma)
    half = kernel_size // 2
    v = field.values
    if half == 0:
        return DensityField(field.nelx, field.nely, v.copy())
    padded = np.pad(v, half, mode="reflect")
    w2 = np.outer(w, w)
    out = v.copy()
    for i in range(kernel_size):
        for j in range(kernel_size):
            if i == half and j == half:
                continue
            shifted = padded[i: i + field.nely, j: j + field.nelx]
            out += w2[i, j] * (shifted - v)
    np.clip(out, v.min(), v.max(), out=out)
    return DensityField(field.nelx, field.nely, out)


def measured_volfrac(field: DensityField) -> float:
    """Achieved volume fraction: mean element density."""
    return field.mean()


def postprocess(field: DensityField, config: PostprocessConfig = PostprocessConfig()) -> DensityField:
    """Threshold then smooth, in that order."""
    return gaussian_smooth(threshold(field, config.threshold), config.kernel_size, config.sigma)
