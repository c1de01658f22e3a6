"""Saturated blurry data synthesis.

Pipeline per pair: bright pixels of a sharp [0,1] patch are enlarged into
HDR range, the HDR image is blurred with a random motion kernel, and the
result is clipped back to [0,1] (optionally with noise).  Ground truth is
the clipped HDR image; the ground-truth latent map is the ratio of the
clipped to the unclipped blurred image, computed before noise.

All randomness flows through numpy's PCG64 generator (``default_rng``):
streams are stable across platforms for a fixed seed, and per-pair seeds
are derived as ``seed + pair index`` so generation parallelizes without
changing results.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, KernelError
from .image import EPSILON, convolve, delta_kernel, validate_image, validate_kernel
from . import io as sdio

THRESHOLD_RANGE = (0.75, 0.95)
ENLARGE_RANGE = (1.5, 5.0)
KERNEL_SIZE_RANGE = (11, 33)
NOISE_SIGMA_MAX = 0.03

KERNEL_SMOOTH_SIGMA = 0.5


@dataclass(frozen=True)
class SynthConfig:
    """Sampling ranges for one synthesis run.  Fixed seed => fixed output."""

    seed: int = 0
    threshold_range: tuple = THRESHOLD_RANGE
    enlarge_range: tuple = ENLARGE_RANGE
    kernel_size_range: tuple = KERNEL_SIZE_RANGE
    noise_kind: str = "none"            # none | gaussian | poisson
    noise_sigma: float = 0.01           # gaussian: exact sigma, or lower bound
    noise_sigma_max: float | None = None  # gaussian: sample sigma in [sigma, max]
    poisson_peak: float = 1000.0

    def __post_init__(self):
        lo, hi = self.threshold_range
        if not (THRESHOLD_RANGE[0] <= lo <= hi <= THRESHOLD_RANGE[1]):
            raise ConfigError(f"threshold range must lie within {THRESHOLD_RANGE}, got {self.threshold_range}")
        lo, hi = self.enlarge_range
        if not (ENLARGE_RANGE[0] <= lo <= hi <= ENLARGE_RANGE[1]):
            raise ConfigError(f"enlarge range must lie within {ENLARGE_RANGE}, got {self.enlarge_range}")
        lo, hi = self.kernel_size_range
        if not (KERNEL_SIZE_RANGE[0] <= lo <= hi <= KERNEL_SIZE_RANGE[1]):
            raise ConfigError(
                f"kernel size range must lie within {KERNEL_SIZE_RANGE}, got {self.kernel_size_range}")
        if self.noise_kind not in ("none", "gaussian", "poisson"):
            raise ConfigError(f"unknown noise kind {self.noise_kind!r}")
        if self.noise_kind == "gaussian":
            hi = self.noise_sigma if self.noise_sigma_max is None else self.noise_sigma_max
            if not (0 <= self.noise_sigma <= hi <= NOISE_SIGMA_MAX):
                raise ConfigError(
                    f"gaussian sigma must satisfy 0 <= {self.noise_sigma} <= {hi} <= {NOISE_SIGMA_MAX}")
        if self.poisson_peak <= 0:
            raise ConfigError(f"poisson peak must be positive, got {self.poisson_peak}")


def enlarge_saturate(sharp: np.ndarray, threshold: float, enlarge: float) -> np.ndarray:
    """Push bright pixels into HDR range: v -> v * enlarge where v > threshold.

    No clipping happens here; the result is the unbounded "scene" image.
    """
    sharp = validate_image(sharp, observed=True, name="sharp image")
    if not 0 < threshold < 1:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    if enlarge < 1:
        raise ConfigError(f"enlarge factor must be >= 1, got {enlarge}")
    return np.where(sharp > threshold, sharp * enlarge, sharp)


def _rasterize_trajectory(points: np.ndarray, size: int) -> np.ndarray:
    """Bilinear-splat trajectory samples (centered coordinates) onto a grid."""
    k = np.zeros((size, size))
    center = size // 2
    ys = points[:, 0] + center
    xs = points[:, 1] + center
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = ys - y0
    fx = xs - x0
    weight = 1.0 / len(points)
    for dy in (0, 1):
        for dx in (0, 1):
            wy = fy if dy else 1.0 - fy
            wx = fx if dx else 1.0 - fx
            np.add.at(k, (np.clip(y0 + dy, 0, size - 1), np.clip(x0 + dx, 0, size - 1)),
                      weight * wy * wx)
    return k


def generate_kernel(size: int, seed: int, *, steps: int | None = None) -> np.ndarray:
    """Random motion-blur kernel from a sub-pixel camera-trajectory walk.

    The walk has a smoothly jittering heading and speed; samples are
    centered on their centroid, bilinear-splatted, smoothed with a small
    Gaussian and renormalized.  A degenerate walk (no movement) yields the
    single-tap delta kernel.
    """
    if size < 3 or size > KERNEL_SIZE_RANGE[1]:
        raise KernelError(f"kernel size must be in [3, {KERNEL_SIZE_RANGE[1]}], got {size}")
    if size % 2 == 0:
        raise KernelError(f"kernel size must be odd, got {size}")
    rng = np.random.default_rng(seed)
    if steps is None:
        steps = 4 * size
    if steps <= 0:
        return delta_kernel(size)

    heading = rng.uniform(0.0, 2.0 * np.pi)
    speeds = np.abs(rng.normal(0.35, 0.2, size=steps))
    turns = rng.normal(0.0, 0.3, size=steps)
    headings = heading + np.cumsum(turns)
    deltas = np.stack([np.sin(headings), np.cos(headings)], axis=1) * speeds[:, None]
    points = np.concatenate([np.zeros((1, 2)), np.cumsum(deltas, axis=0)], axis=0)
    points -= points.mean(axis=0)

    extent = np.abs(points).max()
    if extent == 0.0:
        return delta_kernel(size)
    limit = (size - 3) / 2.0
    if extent > limit:
        points *= limit / extent

    k = _rasterize_trajectory(points, size)
    k = gaussian_filter(k, sigma=KERNEL_SMOOTH_SIGMA, mode="constant")
    k = np.maximum(k, 0.0)
    return k / k.sum()


@dataclass
class SynthPair:
    blurry: np.ndarray      # B in [0,1]
    gt: np.ndarray          # clipped HDR ground truth in [0,1]
    kernel: np.ndarray
    map_gt: np.ndarray      # ratio of clipped to unclipped blur, pre-noise
    meta: dict


def synth_pair(sharp: np.ndarray, cfg: SynthConfig, *, pair_seed: int | None = None,
               kernel: np.ndarray | None = None) -> SynthPair:
    """Synthesize one (blurry, ground truth, kernel, map) tuple."""
    sharp = validate_image(sharp, observed=True, name="sharp image")
    seed = cfg.seed if pair_seed is None else pair_seed
    rng = np.random.default_rng(seed)

    threshold = rng.uniform(*cfg.threshold_range)
    enlarge = rng.uniform(*cfg.enlarge_range)
    if kernel is None:
        lo, hi = cfg.kernel_size_range
        ksize = int(rng.integers(lo // 2, hi // 2 + 1)) * 2 + 1
        ksize = min(max(ksize, lo), hi)
        kernel = generate_kernel(ksize, int(rng.integers(0, 2**63)))
    else:
        kernel = validate_kernel(kernel)

    hdr = enlarge_saturate(sharp, threshold, enlarge)
    blur = convolve(hdr, kernel)
    clipped = np.clip(blur, 0.0, 1.0)
    map_gt = np.clip(clipped / (blur + EPSILON), 0.0, 1.0)
    gt = np.clip(hdr, 0.0, 1.0)

    sigma = 0.0
    if cfg.noise_kind == "gaussian":
        sigma = cfg.noise_sigma if cfg.noise_sigma_max is None else \
            rng.uniform(cfg.noise_sigma, cfg.noise_sigma_max)
        blurry = np.clip(clipped + sigma * rng.standard_normal(clipped.shape), 0.0, 1.0)
    elif cfg.noise_kind == "poisson":
        # Shot noise acts on the pre-clip intensities.
        blurry = np.clip(rng.poisson(np.maximum(blur, 0.0) * cfg.poisson_peak) / cfg.poisson_peak,
                         0.0, 1.0)
    else:
        blurry = clipped

    meta = {
        "seed": int(seed),
        "threshold": float(threshold),
        "enlarge": float(enlarge),
        "kernel_size": int(kernel.shape[0]),
        "noise_kind": cfg.noise_kind,
        "noise_sigma": float(sigma),
        "clipped_fraction": float(np.mean(blur > 1.0)),
    }
    return SynthPair(blurry=blurry, gt=gt, kernel=kernel, map_gt=map_gt, meta=meta)


def write_fixture(directory, pair: SynthPair, *, bitdepth: int | None = None) -> None:
    """Write one fixture: blurry.png, gt.png, kernel.txt, map_gt.sdbf, meta.json.

    Each file is written atomically (temp + rename) so parallel readers
    never see partial fixtures.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if bitdepth is None:
        bitdepth = 16 if pair.blurry.shape[-1] == 1 or pair.blurry.ndim == 2 else 8

    def png(img):
        # PIL infers the output format from the suffix, so keep ".png".
        return lambda tmp: (sdio.save_png(tmp + ".png", img, bitdepth=bitdepth),
                            os.replace(tmp + ".png", tmp))

    sdio.atomic_write(directory / "blurry.png", png(pair.blurry))
    sdio.atomic_write(directory / "gt.png", png(pair.gt))
    sdio.atomic_write(directory / "kernel.txt",
                      lambda tmp: sdio.save_kernel(tmp, pair.kernel))
    sdio.atomic_write(directory / "map_gt.sdbf",
                      lambda tmp: sdio.save_sdbf(tmp, pair.map_gt))
    sdio.atomic_write(directory / "meta.json",
                      lambda tmp: Path(tmp).write_text(
                          json.dumps(pair.meta, sort_keys=True, indent=1) + "\n"))


def read_fixture(directory) -> SynthPair:
    directory = Path(directory)
    return SynthPair(
        blurry=sdio.load_png(directory / "blurry.png"),
        gt=sdio.load_png(directory / "gt.png"),
        kernel=sdio.load_kernel(directory / "kernel.txt"),
        map_gt=sdio.load_sdbf(directory / "map_gt.sdbf"),
        meta=json.loads((directory / "meta.json").read_text()),
    )


def list_fixtures(root):
    """Fixture subdirectories under root, sorted by name."""
    root = Path(root)
    return sorted(p for p in root.iterdir() if (p / "blurry.png").exists())
