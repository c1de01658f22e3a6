"""Shared fixtures: procedural test scenes and seeded fixture sets."""

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from satdeblur.synth import SynthConfig, generate_kernel, synth_pair


def make_night_scene(size, seed, channels=1):
    """Dim textured background with a handful of bright light blobs.

    Blob values sit above typical saturation thresholds, so synthesis
    pushes them deep into HDR range and the blurred result clips.
    """
    rng = np.random.default_rng(seed)
    base = gaussian_filter(rng.random((size, size)), 2.0)
    lo, hi = base.min(), base.max()
    img = 0.2 + 0.4 * (base - lo) / (hi - lo)
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(6, 11)):
        cy, cx = rng.uniform(10, size - 10, 2)
        r = rng.uniform(2.5, 4.5)
        blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)))
        img = np.maximum(img, rng.uniform(0.85, 1.0) * (blob > 0.35))
    img = np.clip(img, 0.0, 1.0)[..., None]
    return img if channels == 1 else np.repeat(img, channels, axis=2)


def make_smooth_scene(size, seed, lo=0.1, hi=0.9, channels=1):
    """Smooth random scene bounded away from 0 and 1 (no saturation)."""
    rng = np.random.default_rng(seed)
    base = gaussian_filter(rng.random((size, size)), 1.5)
    bmin, bmax = base.min(), base.max()
    img = (lo + (hi - lo) * (base - bmin) / (bmax - bmin))[..., None]
    return img if channels == 1 else np.repeat(img, channels, axis=2)


def make_saturated_fixture(index, *, size=96, noise_sigma=0.01):
    """One deeply saturated fixture of the directional-ablation set.

    Enlarge factors in [3.5, 5] and low thresholds give >= 5% clipped
    pixels; compact 11x11 trajectory kernels keep the iteration close to
    converged by 30 steps.
    """
    sharp = make_night_scene(size, 2000 + index)
    kernel = generate_kernel(11, 7000 + index, steps=8)
    cfg = SynthConfig(
        seed=100,
        threshold_range=(0.75, 0.82),
        enlarge_range=(3.5, 5.0),
        kernel_size_range=(11, 11),
        noise_kind="gaussian",
        noise_sigma=noise_sigma,
    )
    return synth_pair(sharp, cfg, pair_seed=100 + index, kernel=kernel)


@pytest.fixture(scope="session")
def saturated_fixture_set():
    """The 20-fixture saturated set shared by the directional criteria."""
    return [make_saturated_fixture(i) for i in range(20)]


@pytest.fixture(scope="session")
def noiseless_blur_set():
    """20 noiseless unsaturated (B = I conv K) pairs for RL properties."""
    pairs = []
    for i in range(20):
        sharp = make_smooth_scene(64, 3000 + i)
        kernel = generate_kernel(11, 8000 + i, steps=10)
        from satdeblur.image import convolve

        blurry = convolve(sharp, kernel)
        pairs.append((blurry, sharp, kernel))
    return pairs
