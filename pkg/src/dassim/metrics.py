"""Evaluation metrics: MSE, relative RMSE and SSIM.

RRMSE normalizes the squared error by the mean square of the reference, so
a zero prediction scores exactly 1 and rescaling both inputs by a common
factor changes nothing. SSIM uses an 11x11 Gaussian window (sigma 1.5)
with constants C1 = (0.01 L)^2 and C2 = (0.03 L)^2 where L is the joint
value range of the two images, keeping the measure symmetric.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, ZeroReference

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _aligned(pred, ref):
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape:
        raise DimensionMismatch(f"shape mismatch: {pred.shape} vs {ref.shape}")
    return pred, ref


def mse(pred, ref) -> float:
    """Mean squared difference over all entries."""
    pred, ref = _aligned(pred, ref)
    return float(np.mean((pred - ref) ** 2))


def rrmse(pred, ref, per_component: bool = False):
    """Root of the MSE normalized by the reference mean square.

    With ``per_component`` the inputs are treated as (steps, components)
    and one value is returned per trailing-axis component; otherwise a
    single value is computed over all entries.
    """
    pred, ref = _aligned(pred, ref)
    if per_component:
        flat_p = pred.reshape(-1, pred.shape[-1])
        flat_r = ref.reshape(-1, ref.shape[-1])
        ref_ms = np.mean(flat_r**2, axis=0)
        if np.any(ref_ms == 0.0):
            raise ZeroReference("a reference component is identically zero")
        return np.sqrt(np.mean((flat_p - flat_r) ** 2, axis=0) / ref_ms)
    ref_ms = np.mean(ref**2)
    if ref_ms == 0.0:
        raise ZeroReference("the reference is identically zero")
    return float(np.sqrt(np.mean((pred - ref) ** 2) / ref_ms))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _window_means(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = kernel.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (win, win))
    return np.tensordot(view, kernel, axes=([2, 3], [0, 1]))


def ssim(img_a, img_b) -> float:
    """Mean structural similarity between two 2-D fields.

    Symmetric in its arguments; exactly 1 for identical images and
    strictly below 1 whenever any pixel differs.
    """
    a, b = _aligned(img_a, img_b)
    if a.ndim != 2:
        raise DimensionMismatch(f"ssim needs 2-D grids, got {a.ndim}-D")
    if min(a.shape) < SSIM_WINDOW:
        raise DimensionMismatch(
            f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DimensionMismatch("ssim inputs must be finite")

    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    drange = hi - lo
    if drange == 0.0:
        # Both images constant at the same value.
        return 1.0
    c1 = (0.01 * drange) ** 2
    c2 = (0.03 * drange) ** 2

    kernel = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_a = _window_means(a, kernel)
    mu_b = _window_means(b, kernel)
    var_a = _window_means(a * a, kernel) - mu_a * mu_a
    var_b = _window_means(b * b, kernel) - mu_b * mu_b
    cov = _window_means(a * b, kernel) - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
