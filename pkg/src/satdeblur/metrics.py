"""PSNR and SSIM for [0, 1] images.

The SSIM variant is pinned here so numbers are reproducible within this
toolkit: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic
range 1, computed on the luma plane (Rec. 601 weights) of color inputs,
mean over valid window positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .errors import ShapeError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; math.inf for identical images.

    The infinity sentinel is returned directly (no log-of-zero is
    evaluated); report serialization renders it as "identical".
    """
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _luma(img):
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    r, g, b = LUMA_WEIGHTS
    return r * img[..., 0] + g * img[..., 1] + b * img[..., 2]


def _gaussian_window(size, sigma):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b) -> float:
    """Mean structural similarity over valid window positions."""
    a, b = _check_pair(a, b)
    x = _luma(a)
    y = _luma(b)
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ShapeError(
            f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2

    mu_x = convolve2d(x, w, mode="valid")
    mu_y = convolve2d(y, w, mode="valid")
    xx = convolve2d(x * x, w, mode="valid") - mu_x**2
    yy = convolve2d(y * y, w, mode="valid") - mu_y**2
    xy = convolve2d(x * y, w, mode="valid") - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-image and aggregate PSNR/SSIM results."""

    entries: list = field(default_factory=list)  # (name, psnr, ssim)

    def add(self, name: str, psnr_db: float, ssim_value: float) -> None:
        self.entries.append((name, psnr_db, ssim_value))

    @property
    def mean_psnr(self) -> float:
        finite = [p for _, p, _ in self.entries if math.isfinite(p)]
        return float(np.mean(finite)) if finite else math.inf

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s for _, _, s in self.entries])) if self.entries else math.nan

    def to_dict(self) -> dict:
        return {
            "images": [
                {"name": n,
                 "psnr": ("identical" if math.isinf(p) else round(p, 4)),
                 "ssim": round(s, 6)}
                for n, p, s in self.entries
            ],
            "mean_psnr": ("identical" if math.isinf(self.mean_psnr) else round(self.mean_psnr, 4)),
            "mean_ssim": round(self.mean_ssim, 6) if self.entries else None,
            "count": len(self.entries),
        }


def compare(a, b, name: str = "") -> tuple:
    return psnr(a, b), ssim(a, b)
