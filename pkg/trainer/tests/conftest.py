"""Shared fixtures: synthesized training data via the deblurring CLI.

The trainer consumes the other component only through files, so test
fixtures are produced by invoking its command-line interface.
"""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image
from scipy.ndimage import gaussian_filter


def make_night_scene(size, seed):
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
    return np.clip(img, 0.0, 1.0)


def save_scene_png(path, scene):
    data = np.clip(np.rint(scene * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(data).save(path)


def synthesize_fixtures(root, n_scenes, *, seed=17, size=64, sigma=0.01):
    """Run `satdeblur synth` on procedurally drawn night scenes."""
    root = Path(root)
    src = root / "src"
    src.mkdir(parents=True, exist_ok=True)
    for i in range(n_scenes):
        save_scene_png(src / f"scene{i:03d}.png", make_night_scene(size, seed * 1000 + i))
    fixtures = root / "fixtures"
    cmd = [sys.executable, "-m", "satdeblur.cli", "synth", str(src),
           "--out", str(fixtures), "--seed", str(seed),
           "--kernel-size-range", "11", "11",
           "--noise", "gaussian", "--sigma", str(sigma)]
    result = subprocess.run(cmd, capture_output=True, text=True)
    assert result.returncode == 0, f"synth failed: {result.stderr}"
    return fixtures


@pytest.fixture(scope="session")
def four_fixtures(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    return synthesize_fixtures(root, 4)


def make_saturated_fixture(index, *, size=96, noise_sigma=0.01):
    """One fixture of the deblurring side's saturated acceptance recipe.

    Mirrors tests/conftest.py::make_saturated_fixture over there (same
    scene seeds, compact 11x11 trajectory kernels, 1% noise) so the
    held-out evaluation set is the same distribution both packages use.
    """
    from satdeblur.synth import SynthConfig, generate_kernel, synth_pair

    sharp = make_night_scene(size, 2000 + index)[..., None]
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
