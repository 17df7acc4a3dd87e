"""Image quality metrics.

PSNR and SSIM act on real (magnitude) images; NMSE also accepts complex input.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0


def _pair(ref, test, allow_complex=False):
    ref, test = np.asarray(ref), np.asarray(test)
    if not allow_complex and (np.iscomplexobj(ref) or np.iscomplexobj(test)):
        raise TypeError("expected real images; take magnitudes first")
    dtype = np.complex128 if np.iscomplexobj(ref) or np.iscomplexobj(test) else np.float64
    ref, test = ref.astype(dtype), test.astype(dtype)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {test.shape}")
    return ref, test


def psnr(ref, test) -> float:
    """``10 log10(max(ref)^2 / MSE)``; identical images give the 99 dB cap."""
    ref, test = _pair(ref, test)
    peak = ref.max()
    if peak <= 0:
        raise ValueError("reference maximum must be positive")
    mse = np.mean((ref - test) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10 * np.log10(peak**2 / mse)))


def nmse(ref, test) -> float:
    """``|test - ref|^2 / |ref|^2``."""
    ref, test = _pair(ref, test, allow_complex=True)
    denom = np.sum(np.abs(ref) ** 2)
    if denom == 0:
        raise ValueError("reference has zero norm")
    return float(np.sum(np.abs(test - ref) ** 2) / denom)


def ssim(ref, test, window: int = 7, k1: float = 0.01, k2: float = 0.03,
         data_range: float | None = None) -> float:
    """Mean SSIM over all fully-contained ``window x window`` patches (uniform weights).

    ``data_range`` defaults to ``max(ref) - min(ref)``.
    """
    ref, test = _pair(ref, test)
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd and positive, got {window}")
    if window > min(ref.shape):
        raise ValueError(f"window {window} larger than image {ref.shape}")
    L = ref.max() - ref.min() if data_range is None else data_range
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    a = sliding_window_view(ref, (window, window))
    b = sliding_window_view(test, (window, window))
    mu_a = a.mean(axis=(-2, -1))
    mu_b = b.mean(axis=(-2, -1))
    var_a = (a * a).mean(axis=(-2, -1)) - mu_a**2
    var_b = (b * b).mean(axis=(-2, -1)) - mu_b**2
    cov = (a * b).mean(axis=(-2, -1)) - mu_a * mu_b
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(s.mean())


def evaluate(truth, recon) -> dict[str, float]:
    """Metrics on magnitude images, both divided by ``max |truth|``."""
    ref = np.abs(np.asarray(truth))
    peak = ref.max()
    ref = ref / peak
    test = np.abs(np.asarray(recon)) / peak
    return {"psnr": psnr(ref, test), "ssim": ssim(ref, test), "nmse": nmse(ref, test)}
