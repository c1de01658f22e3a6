"""Command-line surface: synth, deblur, ablate, eval.

Every subcommand is deterministic given (inputs, config, seed), never
mutates its inputs, and writes outputs atomically (temp file + rename).
A resolved-config snapshot is written next to the outputs so any run can
be reproduced from its artifacts alone.

Configuration comes from an optional TOML file (flat key/value pairs per
subcommand name) overridden by command-line flags.  Unknown config keys
are rejected before anything is written.

Exit codes: 0 success, 2 config error, 3 I/O or file-format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as sdio
from .errors import ConfigError, FormatError, KernelError, NumericalError, SatDeblurError
from .estimators import EstimatorChoice
from .image import edge_taper
from .metrics import MetricReport, psnr, ssim
from .nn import load_weights
from .solver import SolverConfig, solve
from .synth import SynthConfig, list_fixtures, read_fixture, synth_pair, write_fixture

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


# ---------------------------------------------------------------------------
# config plumbing


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return json.dumps(str(v))


def write_config_snapshot(path, command: str, values: dict) -> None:
    """Write the resolved parameter set next to a run's outputs.

    Only parameters go in the snapshot, never input/output paths: paths
    describe where a run happened, not what it computed, and recording
    them would make byte-identical reruns in fresh directories impossible.
    """
    lines = [f"[{command}]"]
    for key in sorted(values):
        v = values[key]
        if v is None:
            continue
        lines.append(f"{key} = {_toml_value(v)}")
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _apply_config_file(parser, subparsers, argv):
    """Pre-scan for --config and install file values as parser defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config, "rb") as fh:
            data = tomllib.load(fh)
    except OSError:
        raise
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{known.config}: {exc}") from exc
    for section, values in data.items():
        sub = subparsers.choices.get(section)
        if sub is None:
            raise ConfigError(f"{known.config}: unknown section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"{known.config}: section [{section}] must be a table")
        valid = {a.dest for a in sub._actions}
        for key, value in values.items():
            if key not in valid:
                raise ConfigError(f"{known.config}: unknown key {key!r} in [{section}]")
            sub.set_defaults(**{key: value})


# ---------------------------------------------------------------------------
# atomic output helpers


def _atomic_write_text(path, text):
    sdio.atomic_write(path, lambda tmp: Path(tmp).write_text(text))


def _atomic_save_png(path, img, bitdepth):
    # PIL infers the output format from the suffix, so keep ".png".
    def write(tmp):
        sdio.save_png(tmp + ".png", img, bitdepth=bitdepth)
        os.replace(tmp + ".png", tmp)
    sdio.atomic_write(path, write)


# ---------------------------------------------------------------------------
# estimator choice from flags


def _choice_from_args(args) -> EstimatorChoice:
    kwargs = dict(
        map_kind=args.map, prior_kind=args.prior,
        threshold=args.threshold, sharpness=args.sharpness,
        prior_weight=args.prior_weight, prior_alpha=args.prior_alpha,
    )
    if args.map == "men_cnn":
        if not args.men_weights:
            raise ConfigError("map 'men_cnn' requires --men-weights")
        kwargs["men_weights"] = load_weights(args.men_weights)
    if args.prior == "pen_cnn":
        if not args.pen_weights:
            raise ConfigError("prior 'pen_cnn' requires --pen-weights")
        kwargs["pen_weights"] = load_weights(args.pen_weights)
    return EstimatorChoice(**kwargs)


def parse_variant(spec: str, men_weights=None, pen_weights=None) -> EstimatorChoice:
    """Parse an ablation variant like ``map=smooth_clip,prior=none,a=30``.

    A bare token is shorthand for ``map=<token>,prior=none``.
    """
    fields = {"prior_kind": "none"}
    alias = {"map": "map_kind", "prior": "prior_kind", "v": "threshold",
             "a": "sharpness", "lambda": "prior_weight", "alpha": "prior_alpha"}
    parts = [p.strip() for p in spec.split(",") if p.strip()]
    if not parts:
        raise ConfigError("empty variant spec")
    for part in parts:
        if "=" not in part:
            fields["map_kind"] = part
            continue
        key, _, value = part.partition("=")
        key = alias.get(key.strip(), key.strip())
        if key in ("map_kind", "prior_kind"):
            fields[key] = value.strip()
        elif key in ("threshold", "sharpness", "prior_weight", "prior_alpha", "prior_cap"):
            fields[key] = float(value)
        else:
            raise ConfigError(f"unknown variant field {key!r} in {spec!r}")
    if fields.get("map_kind") == "men_cnn":
        fields["men_weights"] = men_weights
    if fields.get("prior_kind") == "pen_cnn":
        fields["pen_weights"] = pen_weights
    return EstimatorChoice(**fields)


# ---------------------------------------------------------------------------
# synth


def _synth_one(job):
    src_path, out_dir, cfg, pair_seed, bitdepth = job
    sharp = sdio.load_image(src_path)
    pair = synth_pair(sharp, cfg, pair_seed=pair_seed)
    write_fixture(out_dir, pair, bitdepth=bitdepth)
    return str(out_dir)


def cmd_synth(args) -> int:
    sources = []
    for inp in args.inputs:
        p = Path(inp)
        if p.is_dir():
            sources += sorted(q for q in p.iterdir()
                              if q.suffix.lower() in (".png", ".sdbf"))
        elif p.exists():
            sources.append(p)
        else:
            raise FileNotFoundError(f"input {p} does not exist")
    if not sources:
        raise ConfigError("no input images found")

    cfg = SynthConfig(
        seed=args.seed,
        threshold_range=tuple(args.threshold_range),
        enlarge_range=tuple(args.enlarge_range),
        kernel_size_range=tuple(args.kernel_size_range),
        noise_kind=args.noise,
        noise_sigma=args.sigma,
        noise_sigma_max=args.sigma_max,
    )
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)

    jobs = []
    idx = 0
    for src in sources:
        for rep in range(args.pairs_per_image):
            name = f"{src.stem}_{rep:02d}" if args.pairs_per_image > 1 else src.stem
            jobs.append((src, out_root / name, cfg, args.seed + idx, args.bitdepth))
            idx += 1

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(_synth_one, jobs))
    else:
        for job in jobs:
            _synth_one(job)

    write_config_snapshot(out_root / "resolved_config.toml", "synth", {
        "seed": args.seed, "pairs_per_image": args.pairs_per_image,
        "threshold_range": list(args.threshold_range),
        "enlarge_range": list(args.enlarge_range),
        "kernel_size_range": list(args.kernel_size_range),
        "noise": args.noise, "sigma": args.sigma, "sigma_max": args.sigma_max,
        "bitdepth": args.bitdepth, "count": len(jobs),
    })
    print(f"synthesized {len(jobs)} pair(s) under {out_root}")
    return 0


# ---------------------------------------------------------------------------
# deblur


def cmd_deblur(args) -> int:
    blurry = sdio.load_image(args.blurry)
    kernel = sdio.load_kernel(args.kernel)
    choice = _choice_from_args(args)
    reference = sdio.load_image(args.reference) if args.reference else None
    if args.edgetaper:
        blurry = np.clip(edge_taper(blurry, kernel), 0.0, 1.0)

    cfg = SolverConfig(
        iterations=args.iterations,
        choice=choice,
        clamp_output=not args.no_clamp,
        clamp_max=args.clamp_max,
        record_trace=args.trace is not None,
    )
    restored, trace = solve(blurry, kernel, cfg, reference_image=reference)
    out = Path(args.out)
    _atomic_save_png(out, np.clip(restored, 0.0, 1.0), args.bitdepth)
    if args.trace is not None:
        _atomic_write_text(args.trace, trace.to_jsonl())
    write_config_snapshot(out.with_name(out.stem + ".config.toml"), "deblur", {
        "map": args.map, "prior": args.prior, "threshold": args.threshold,
        "sharpness": args.sharpness, "prior_weight": args.prior_weight,
        "prior_alpha": args.prior_alpha, "iterations": args.iterations,
        "no_clamp": args.no_clamp, "clamp_max": args.clamp_max,
        "edgetaper": args.edgetaper, "bitdepth": args.bitdepth,
    })
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# ablate


def _ablate_one(job):
    fixture_dir, choice, iterations = job
    pair = read_fixture(fixture_dir)
    cfg = SolverConfig(iterations=iterations, choice=choice)
    restored, _ = solve(pair.blurry, pair.kernel, cfg, reference_image=pair.gt)
    restored = np.clip(restored, 0.0, 1.0)
    return fixture_dir.name, psnr(restored, pair.gt), ssim(restored, pair.gt)


def cmd_ablate(args) -> int:
    fixtures = list_fixtures(args.fixtures)
    if not fixtures:
        raise ConfigError(f"no fixtures found under {args.fixtures}")
    men = load_weights(args.men_weights) if args.men_weights else None
    pen = load_weights(args.pen_weights) if args.pen_weights else None
    # Validate every variant before running anything.
    choices = {spec: parse_variant(spec, men_weights=men, pen_weights=pen)
               for spec in args.variant}

    results = {}
    for spec, choice in choices.items():
        jobs = [(f, choice, args.iterations) for f in fixtures]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                rows = list(pool.map(_ablate_one, jobs))
        else:
            rows = [_ablate_one(j) for j in jobs]
        report = MetricReport()
        for name, p, s in rows:
            report.add(name, p, s)
        results[spec] = report

    table = {spec: rep.to_dict() for spec, rep in results.items()}
    out = Path(args.out)
    _atomic_write_text(out, json.dumps(table, indent=1, sort_keys=True) + "\n")
    write_config_snapshot(out.with_name(out.stem + ".config.toml"), "ablate", {
        "variant": list(args.variant), "iterations": args.iterations,
        "jobs": args.jobs,
    })

    width = max(len(s) for s in results) + 2
    print(f"{'variant':<{width}}{'PSNR':>9}{'SSIM':>9}   n")
    for spec, rep in results.items():
        p = rep.mean_psnr
        ptxt = "ident" if math.isinf(p) else f"{p:8.2f}"
        print(f"{spec:<{width}}{ptxt:>9}{rep.mean_ssim:9.4f}   {len(rep.entries)}")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    fixtures = list_fixtures(args.fixtures)
    if not fixtures:
        raise ConfigError(f"no fixtures found under {args.fixtures}")
    restored_root = Path(args.restored)
    report = MetricReport()
    for fdir in fixtures:
        rpath = restored_root / f"{fdir.name}.png"
        if not rpath.exists():
            raise FileNotFoundError(f"no restored image {rpath} for fixture {fdir.name}")
        restored = sdio.load_image(rpath)
        gt = sdio.load_image(fdir / "gt.png")
        report.add(fdir.name, psnr(restored, gt), ssim(restored, gt))
    out = Path(args.out)
    _atomic_write_text(out, json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    write_config_snapshot(out.with_name(out.stem + ".config.toml"), "eval", {
        "count": len(fixtures),
    })
    d = report.to_dict()
    print(f"mean PSNR {d['mean_psnr']}  mean SSIM {d['mean_ssim']}  ({d['count']} images)")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="satdeblur",
        description="Deconvolution toolkit for saturated blurry images.")
    parser.add_argument("--config", help="TOML config file with per-subcommand sections")
    subs = parser.add_subparsers(dest="command", required=True)

    sy = subs.add_parser("synth", help="generate saturated blurry fixtures")
    sy.add_argument("inputs", nargs="+", help="sharp source images or directories")
    sy.add_argument("--out", required=True)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--pairs-per-image", type=int, default=1)
    sy.add_argument("--threshold-range", type=float, nargs=2, default=[0.75, 0.95])
    sy.add_argument("--enlarge-range", type=float, nargs=2, default=[1.5, 5.0])
    sy.add_argument("--kernel-size-range", type=int, nargs=2, default=[11, 33])
    sy.add_argument("--noise", choices=["none", "gaussian", "poisson"], default="none")
    sy.add_argument("--sigma", type=float, default=0.01)
    sy.add_argument("--sigma-max", type=float, default=None)
    sy.add_argument("--bitdepth", type=int, choices=[8, 16], default=None)
    sy.add_argument("--jobs", type=int, default=1)
    sy.set_defaults(func=cmd_synth)

    de = subs.add_parser("deblur", help="deconvolve one blurry image")
    de.add_argument("--blurry", required=True)
    de.add_argument("--kernel", required=True)
    de.add_argument("--out", required=True)
    de.add_argument("--map", choices=["unit", "naive_threshold", "smooth_clip",
                                      "ratio_oracle", "binary_mask", "men_cnn"],
                    default="naive_threshold")
    de.add_argument("--prior", choices=["none", "hyper_laplacian", "pen_cnn"],
                    default="hyper_laplacian")
    de.add_argument("--threshold", type=float, default=0.9)
    de.add_argument("--sharpness", type=float, default=50.0)
    de.add_argument("--prior-weight", type=float, default=0.003)
    de.add_argument("--prior-alpha", type=float, default=0.8)
    de.add_argument("--men-weights")
    de.add_argument("--pen-weights")
    de.add_argument("--reference", help="ground-truth image for oracle map kinds")
    de.add_argument("--iterations", type=int, default=30)
    de.add_argument("--no-clamp", action="store_true")
    de.add_argument("--clamp-max", type=float, default=10.0)
    de.add_argument("--edgetaper", action="store_true")
    de.add_argument("--trace", help="write per-iteration records (JSON lines)")
    de.add_argument("--bitdepth", type=int, choices=[8, 16], default=16)
    de.set_defaults(func=cmd_deblur)

    ab = subs.add_parser("ablate", help="compare estimator variants on a fixture set")
    ab.add_argument("--fixtures", required=True)
    ab.add_argument("--variant", action="append", required=True,
                    help="e.g. 'unit' or 'map=naive_threshold,prior=hyper_laplacian'")
    ab.add_argument("--iterations", type=int, default=30)
    ab.add_argument("--men-weights")
    ab.add_argument("--pen-weights")
    ab.add_argument("--out", required=True)
    ab.add_argument("--jobs", type=int, default=1)
    ab.set_defaults(func=cmd_ablate)

    ev = subs.add_parser("eval", help="PSNR/SSIM of restored images against fixtures")
    ev.add_argument("--fixtures", required=True)
    ev.add_argument("--restored", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    return parser, subs


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        _apply_config_file(parser, subs, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, FormatError, KernelError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except SatDeblurError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
