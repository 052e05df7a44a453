"""Shared Gaussian and Gaussian-derivative filtering (edge-clamped)."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

GRAD_SIGMA = 1.4
GRAD_TRUNCATE = 4.0


def gaussian_kernel_1d(sigma: float, order: int = 0, truncate: float = GRAD_TRUNCATE) -> np.ndarray:
    """1-D Gaussian (order 0) or its first derivative (order 1), sampled on a truncated grid.

    The derivative kernel is oriented so that correlating a ramp x with it
    yields the slope (d/dx convention, not the flipped correlation weights).
    """
    radius = int(np.ceil(truncate * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    if order == 0:
        return g
    if order == 1:
        # Correlation applies the kernel reversed relative to convolution.
        return -x / sigma**2 * g
    raise ValueError(f"unsupported order {order}")


def gradient_magnitude(mask: np.ndarray, sigma: float = GRAD_SIGMA) -> np.ndarray:
    """||grad|| of a 2-D array via separable Gaussian first-derivative filters."""
    g = gaussian_kernel_1d(sigma, order=0)
    d = gaussian_kernel_1d(sigma, order=1)
    gx = ndimage.correlate1d(ndimage.correlate1d(mask, d, axis=1, mode="nearest"),
                             g, axis=0, mode="nearest")
    gy = ndimage.correlate1d(ndimage.correlate1d(mask, g, axis=1, mode="nearest"),
                             d, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def gaussian_blur(arr: np.ndarray, sigma: float, truncate: float = GRAD_TRUNCATE) -> np.ndarray:
    """Edge-clamped Gaussian blur; sigma 0 is the identity."""
    if sigma <= 0:
        return arr.copy()
    g = gaussian_kernel_1d(sigma, order=0, truncate=truncate)
    out = ndimage.correlate1d(arr, g, axis=0, mode="nearest")
    return ndimage.correlate1d(out, g, axis=1, mode="nearest")


def blur_radius(sigma: float, truncate: float = GRAD_TRUNCATE) -> int:
    """Support radius of the truncated blur kernel."""
    if sigma <= 0:
        return 0
    return int(np.ceil(truncate * sigma))
