"""Image quality metrics."""

import math

import numpy as np
from scipy.ndimage import correlate1d

from .const import DB_CAP, MSSSIM_K1, MSSSIM_K2, MSSSIM_SIGMA, MSSSIM_WEIGHTS, MSSSIM_WINDOW
from .errors import ParameterError, ShapeError

DATA_RANGE = 255.0


def _pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"Images differ in shape: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ShapeError(f"Expected (H, W) or (H, W, C) images, got {a.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    return a.astype(np.float64), b.astype(np.float64)


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB on the 8-bit scale, capped at 100."""
    error = mse(a, b)
    if error == 0:
        return DB_CAP
    return min(DB_CAP, 10.0 * math.log10(DATA_RANGE**2 / error))


def _gaussian_window():
    offsets = np.arange(MSSSIM_WINDOW) - MSSSIM_WINDOW // 2
    window = np.exp(-(offsets**2) / (2.0 * MSSSIM_SIGMA**2))
    return window / window.sum()


def _filter_valid(values, window):
    half = len(window) // 2
    out = correlate1d(values, window, axis=0, mode="constant")
    out = correlate1d(out, window, axis=1, mode="constant")
    return out[half:-half, half:-half]


def _ssim_terms(a, b, window):
    c1 = (MSSSIM_K1 * DATA_RANGE) ** 2
    c2 = (MSSSIM_K2 * DATA_RANGE) ** 2
    mu_a = _filter_valid(a, window)
    mu_b = _filter_valid(b, window)
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = _filter_valid(a * a, window) - mu_aa
    var_b = _filter_valid(b * b, window) - mu_bb
    cov = _filter_valid(a * b, window) - mu_ab

    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    luminance = (2.0 * mu_ab + c1) / (mu_aa + mu_bb + c1)
    return float(np.mean(luminance * cs)), float(np.mean(cs))


def _downsample(values):
    height = values.shape[0] // 2 * 2
    width = values.shape[1] // 2 * 2
    values = values[:height, :width]
    return 0.25 * (
        values[0::2, 0::2] + values[1::2, 0::2] + values[0::2, 1::2] + values[1::2, 1::2]
    )


def msssim_levels(height: int, width: int) -> int:
    """Scales that fit the image; each needs at least one full window."""
    levels = 0
    while levels < len(MSSSIM_WEIGHTS) and min(height, width) >= MSSSIM_WINDOW * 2**levels:
        levels += 1
    return levels


def ms_ssim(a, b) -> float:
    """Multi-scale SSIM of two 8-bit images, averaged over colour channels."""
    a, b = _pair(a, b)
    height, width, _ = a.shape
    levels = msssim_levels(height, width)
    if levels == 0:
        raise ShapeError(f"Image {height}x{width} is smaller than the {MSSSIM_WINDOW}px window")
    weights = np.asarray(MSSSIM_WEIGHTS[:levels])
    if levels < len(MSSSIM_WEIGHTS):
        weights = weights / weights.sum()

    window = _gaussian_window()
    total = 0.0
    for channel in range(a.shape[2]):
        x = a[..., channel]
        y = b[..., channel]
        value = 1.0
        for level in range(levels):
            ssim, cs = _ssim_terms(x, y, window)
            term = ssim if level == levels - 1 else cs
            value *= max(term, 0.0) ** weights[level]
            x = _downsample(x)
            y = _downsample(y)
        total += value
    return total / a.shape[2]


def msssim_db(value: float) -> float:
    """-10 log10(1 - ms_ssim), capped at 100."""
    if value >= 1.0:
        return DB_CAP
    return min(DB_CAP, -10.0 * math.log10(1.0 - value))


def distortion(a, b, metric: str = "mse") -> float:
    """The distortion term of the rate-distortion loss."""
    if metric == "mse":
        return mse(a, b)
    if metric == "ms-ssim":
        return 1.0 - ms_ssim(a, b)
    raise ParameterError(f"Unknown distortion metric {metric}")
