"""Fixture-tree dataset: directories of (blurry.png, gt.png, kernel.txt)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .formats import load_kernel, load_png


class FixtureDataset:
    """Loads synthesized fixtures eagerly; desk-scale sets are small."""

    def __init__(self, root, dtype=torch.float32):
        self.dirs = sorted(p for p in Path(root).iterdir()
                           if (p / "blurry.png").exists())
        if not self.dirs:
            raise ValueError(f"no fixtures under {root}")
        self.items = []
        for d in self.dirs:
            blurry = load_png(d / "blurry.png")
            gt = load_png(d / "gt.png")
            kernel = load_kernel(d / "kernel.txt")
            self.items.append((
                torch.from_numpy(blurry.transpose(2, 0, 1)).to(dtype),
                torch.from_numpy(gt.transpose(2, 0, 1)).to(dtype),
                torch.from_numpy(kernel).to(dtype),
                d.name,
            ))
        self.channels = self.items[0][0].shape[0]

    def __len__(self):
        return len(self.items)

    def batches(self, batch_size, rng: np.random.Generator):
        """One epoch of shuffled batches of (B, gt, kernel list)."""
        order = rng.permutation(len(self.items))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            B = torch.stack([self.items[i][0] for i in idx])
            gt = torch.stack([self.items[i][1] for i in idx])
            kernels = [self.items[i][2] for i in idx]
            yield B, gt, kernels
