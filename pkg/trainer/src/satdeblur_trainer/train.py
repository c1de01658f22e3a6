"""Two-phase unrolled training and the command-line entry point.

Phase 1 trains the prior network alone with the map fixed at 1; phase 2
optimizes both networks jointly.  The loss is the stage-averaged L1
distance between every unrolled iterate and the ground truth.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from .data import FixtureDataset
from .formats import save_sdnw
from .networks import MapEstimator, PriorEstimator
from .unroll import stage_l1_loss, kernel_otf, unrolled_solve


@dataclass
class TrainConfig:
    """Optimization settings.

    Full-scale defaults; desk-scale runs (what the tests use) reduce
    ``stages`` to 10 and work on 64x64 fixtures.  The patch size itself
    is fixed by the fixture tree, not here.
    """

    stages: int = 30              # unrolled update count; desk scale uses 10
    batch_size: int = 4
    learning_rate: float = 1e-4
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    phase1_steps: int = 300       # prior-only, map fixed at 1
    phase2_steps: int = 300       # joint
    seed: int = 0
    log_every: int = 25

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError(f"stages must be >= 1, got {self.stages}")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("positive learning rate and batch size required")


def _run_phase(dataset, men, pen, params, cfg, steps, *, fixed_unit_map,
               rng, log, stop_when=None):
    """One optimization phase; returns the per-step loss history."""
    opt = torch.optim.Adam(params, lr=cfg.learning_rate, betas=cfg.betas,
                           eps=cfg.adam_eps)
    losses = []
    step = 0
    while step < steps:
        for B, gt, kernels in dataset.batches(cfg.batch_size, rng):
            if step >= steps:
                break
            otf = kernel_otf(kernels, B.shape[-2:])
            stages = unrolled_solve(B, otf, men, pen, cfg.stages,
                                    fixed_unit_map=fixed_unit_map)
            loss = stage_l1_loss(stages, gt)
            if not torch.isfinite(loss):
                raise RuntimeError(f"loss diverged to {loss.item()} at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
            if log and step % cfg.log_every == 0:
                print(f"  step {step:5d}  loss {losses[-1]:.5f}")
            step += 1
            if stop_when is not None and stop_when(losses):
                return losses
    return losses


def train(fixtures_root, cfg: TrainConfig, *, log=True, stop_when=None):
    """Full two-phase run; returns (men, pen, history dict)."""
    torch.manual_seed(cfg.seed)
    dataset = FixtureDataset(fixtures_root)
    channels = dataset.channels
    men = MapEstimator(channels, seed=cfg.seed + 1)
    pen = PriorEstimator(channels, seed=cfg.seed + 2)
    rng = np.random.default_rng(cfg.seed)

    if log:
        print(f"phase 1: prior only, {cfg.phase1_steps} steps")
    phase1 = _run_phase(dataset, men, pen, pen.parameters(), cfg,
                        cfg.phase1_steps, fixed_unit_map=True, rng=rng, log=log,
                        stop_when=stop_when)
    if log:
        print(f"phase 2: joint, {cfg.phase2_steps} steps")
    params = list(men.parameters()) + list(pen.parameters())
    phase2 = _run_phase(dataset, men, pen, params, cfg,
                        cfg.phase2_steps, fixed_unit_map=False, rng=rng, log=log,
                        stop_when=stop_when)
    return men, pen, {"phase1": phase1, "phase2": phase2}


def export_weights(out_dir, men: MapEstimator, pen: PriorEstimator):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_sdnw(out_dir / "men.sdnw", "MEN", men.sdnw_entries())
    save_sdnw(out_dir / "pen.sdnw", "PEN", pen.sdnw_entries())
    return out_dir / "men.sdnw", out_dir / "pen.sdnw"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="satdeblur-train",
        description="Train map/prior estimation networks on synthesized fixtures.")
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="two-phase training run")
    tr.add_argument("--fixtures", required=True)
    tr.add_argument("--out", required=True, help="directory for men.sdnw / pen.sdnw")
    tr.add_argument("--stages", type=int, default=10,
                    help="unrolled updates per step (desk scale; full scale is 30)")
    tr.add_argument("--batch-size", type=int, default=4)
    tr.add_argument("--learning-rate", type=float, default=1e-4)
    tr.add_argument("--phase1-steps", type=int, default=300)
    tr.add_argument("--phase2-steps", type=int, default=300)
    tr.add_argument("--seed", type=int, default=0)

    ex = sub.add_parser("export-fixtures",
                        help="write seeded-weight activation fixtures")
    ex.add_argument("--out", required=True)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--size", type=int, default=16)

    args = parser.parse_args(argv)
    if args.command == "train":
        cfg = TrainConfig(stages=args.stages, batch_size=args.batch_size,
                          learning_rate=args.learning_rate,
                          phase1_steps=args.phase1_steps,
                          phase2_steps=args.phase2_steps, seed=args.seed)
        men, pen, history = train(args.fixtures, cfg)
        men_path, pen_path = export_weights(args.out, men, pen)
        losses = history["phase1"] + history["phase2"]
        (Path(args.out) / "history.json").write_text(json.dumps({
            "config": {**asdict(cfg), "betas": list(cfg.betas)},
            "final_loss": losses[-1] if losses else None,
            "losses": losses,
        }, indent=1))
        print(f"wrote {men_path} and {pen_path}")
        return 0
    if args.command == "export-fixtures":
        from .export import export_activation_fixtures

        export_activation_fixtures(args.out, seed=args.seed, size=args.size)
        print(f"wrote activation fixtures under {args.out}")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
