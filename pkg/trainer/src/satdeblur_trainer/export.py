"""Activation-fixture export for cross-component parity tests.

Each fixture is a triple of files sharing a stem: ``<stem>.sdnw``
(weights), ``<stem>_input.sdbf`` and ``<stem>_expected.sdbf``.  The
expected outputs are computed in float64 so they serve as a precise
reference for any consumer.  SDBF rasters are (H, W, C); tensors map to
them with channels last.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .formats import save_sdbf, save_sdnw
from .networks import MapEstimator, PriorEstimator


def _export_one(out_dir, stem, net, arch, x):
    net = net.double()
    # Quantize to the SDBF payload precision first so the expected output
    # corresponds exactly to the input bytes a consumer will read.
    x = x.astype(np.float32).astype(np.float64)
    with torch.no_grad():
        y = net(torch.from_numpy(x[None].transpose(0, 3, 1, 2)))
    save_sdnw(out_dir / f"{stem}.sdnw", arch, net.sdnw_entries())
    save_sdbf(out_dir / f"{stem}_input.sdbf", x)
    save_sdbf(out_dir / f"{stem}_expected.sdbf", y[0].numpy().transpose(1, 2, 0))


def export_activation_fixtures(out_dir, *, seed=0, size=16):
    """Seeded-weight fixtures for both architectures and channel counts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for channels in (1, 3):
        men = MapEstimator(channels, seed=seed + 10 + channels)
        x = rng.random((size, size, 2 * channels))
        _export_one(out_dir, f"men_c{channels}", men, "MEN", x)
        pen = PriorEstimator(channels, seed=seed + 20 + channels)
        # An awkward size exercises the pad-to-multiple-of-4 contract.
        xp = rng.random((size - 3, size - 2, channels))
        _export_one(out_dir, f"pen_c{channels}", pen, "PEN", xp)
