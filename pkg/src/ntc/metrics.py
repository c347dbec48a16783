"""Image quality metrics on 8-bit images."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ParameterError

# JPEG (JFIF) full-range conversion
_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_OFFSET = np.array([0.0, 128.0, 128.0])

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03
PEAK = 255.0


def rgb_to_ycbcr(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ParameterError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img @ _YCBCR.T + _OFFSET


def ycbcr_to_rgb(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return (img - _OFFSET) @ np.linalg.inv(_YCBCR).T


def luma(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[-1] == 1:
        return img[..., 0]
    return rgb_to_ycbcr(img)[..., 0]


def _pair(reference, test):
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def mse(reference, test) -> float:
    a, b = _pair(reference, test)
    return float(np.mean((a - b) ** 2))


def psnr(reference, test, plane: str = "auto") -> float:
    """``10 log10(255^2 / MSE)`` in dB; ``inf`` for identical inputs.

    ``plane`` is ``gray`` (all samples), ``luma``, ``chroma`` (mean of the
    Cb and Cr MSEs) or ``auto`` (luma for RGB, gray otherwise).
    """
    a, b = _pair(reference, test)
    color = a.ndim == 3 and a.shape[-1] == 3
    if plane == "auto":
        plane = "luma" if color else "gray"
    if plane == "gray":
        err = float(np.mean((a - b) ** 2))
    elif plane in ("luma", "chroma"):
        if not color:
            raise ParameterError(f"plane {plane!r} needs an RGB image")
        ya, yb = rgb_to_ycbcr(a), rgb_to_ycbcr(b)
        sl = slice(0, 1) if plane == "luma" else slice(1, 3)
        err = float(np.mean((ya[..., sl] - yb[..., sl]) ** 2))
    else:
        raise ParameterError(f"unknown plane {plane!r}")
    return math.inf if err == 0 else 10.0 * math.log10(PEAK**2 / err)


def _gaussian():
    t = np.arange(WINDOW) - WINDOW // 2
    g = np.exp(-(t**2) / (2 * SIGMA**2))
    return g / g.sum()


def _filter_valid(img, g):
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    r = WINDOW // 2
    return out[r:-r, r:-r]


def _ssim_terms(a, b):
    g = _gaussian()
    c1, c2 = (K1 * PEAK) ** 2, (K2 * PEAK) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    lum = (2 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _halve(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    x = img[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ssim(reference, test) -> float:
    a, b = _pair(luma(reference), luma(test))
    return _ssim_terms(a, b)[0]


def ms_ssim(reference, test, weights=MS_SSIM_WEIGHTS) -> float:
    """Multi-scale SSIM of the luma planes (11-tap Gaussian, sigma 1.5, 2x2 averaging)."""
    a, b = _pair(luma(reference), luma(test))
    scales = len(weights)
    need = WINDOW * 2 ** (scales - 1)
    if min(a.shape) < need:
        raise ParameterError(
            f"MS-SSIM with {scales} scales needs images of at least {need}x{need}; "
            f"got {a.shape[1]}x{a.shape[0]} (pass fewer weights for fewer scales)"
        )
    score = 1.0
    for j, wj in enumerate(weights):
        s, cs = _ssim_terms(a, b)
        if j == scales - 1:
            score *= max(s, 0.0) ** wj
        else:
            score *= max(cs, 0.0) ** wj
            a, b = _halve(a), _halve(b)
    return float(score)
