"""PSNR and SSIM on ``[0, 1]`` images."""

import numpy as np
from scipy.ndimage import correlate1d

from .core import ShapeError, as_image

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class WindowSizeError(ShapeError):
    pass


def _pair(reference, test):
    a = as_image(reference, "reference")
    b = as_image(test, "test")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(reference, test):
    """PSNR in dB for unit peak; ``inf`` for identical images."""
    a, b = _pair(reference, test)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _gaussian_kernel():
    r = SSIM_WIN // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    return k / k.sum()


def _filter_valid(img, k):
    # Separable Gaussian, keeping only positions where the window fits.
    r = len(k) // 2
    out = correlate1d(img, k, axis=0, mode="constant")
    out = correlate1d(out, k, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim_map(reference, test):
    a, b = _pair(reference, test)
    h, w = a.shape[:2]
    if min(h, w) < SSIM_WIN:
        raise WindowSizeError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    k = _gaussian_kernel()
    maps = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx = _filter_valid(x, k)
        my = _filter_valid(y, k)
        sxx = _filter_valid(x * x, k) - mx * mx
        syy = _filter_valid(y * y, k) - my * my
        sxy = _filter_valid(x * y, k) - mx * my
        num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
        maps.append(num / den)
    return np.stack(maps, axis=2)


def ssim(reference, test):
    """Mean SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    return float(np.mean(ssim_map(reference, test)))
