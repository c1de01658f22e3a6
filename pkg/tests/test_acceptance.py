"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The directional criteria run on the shared 20-fixture saturated set
(conftest.make_saturated_fixture): deeply saturated night scenes with
compact 11x11 trajectory kernels and 1% Gaussian noise.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from satdeblur.cli import main as cli_main
from satdeblur.estimators import EstimatorChoice
from satdeblur.image import adjoint_convolve, convolve
from satdeblur.io import load_png, load_sdbf, save_png
from satdeblur.metrics import psnr
from satdeblur.nn import (
    load_weights,
    men_forward,
    pen_forward,
    random_weights,
    save_weights,
    zero_weights,
)
from satdeblur.objective import poisson_nll, poisson_nll_grad
from satdeblur.solver import SolverConfig, classic_rl, rl_update, solve

from conftest import make_night_scene

GOLDEN_DIR = Path(__file__).parent / "fixtures" / "golden"


def check(tag, ok, detail):
    print(f"[{tag}] {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"{tag}: {detail}"


def random_norm_kernel(rng, max_size=15):
    kh = int(rng.integers(1, max_size // 2 + 1)) * 2 + 1
    kw = int(rng.integers(1, max_size // 2 + 1)) * 2 + 1
    k = rng.random((kh, kw))
    return k / k.sum()


class TestA1Convolution:
    def test_fft_vs_direct_oracle(self):
        rng = np.random.default_rng(42)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(200):
            h = int(rng.integers(16, 65))
            w = int(rng.integers(16, 65))
            img = rng.random((h, w))
            k = random_norm_kernel(rng)
            diff = np.abs(convolve(img, k, method="fft")
                          - convolve(img, k, method="direct")).max()
            worst = max(worst, diff)
        elapsed = time.perf_counter() - start
        check("A1", worst <= 1e-6 and elapsed < 10.0,
              f"max |fft - direct| = {worst:.2e} over 200 pairs in {elapsed:.1f}s")


class TestA2Adjoint:
    def test_inner_product_identity(self):
        rng = np.random.default_rng(43)
        worst = 0.0
        for _ in range(100):
            h = int(rng.integers(16, 49))
            w = int(rng.integers(16, 49))
            x = rng.standard_normal((h, w))
            y = rng.standard_normal((h, w))
            k = random_norm_kernel(rng, max_size=11)
            lhs = float(np.sum(convolve(x, k) * y))
            rhs = float(np.sum(x * adjoint_convolve(y, k)))
            rel = abs(lhs - rhs) / (np.linalg.norm(x) * np.linalg.norm(y))
            worst = max(worst, rel)
        check("A2", worst <= 1e-6,
              f"max |<Kx,y> - <x,K~y>| / (|x||y|) = {worst:.2e} over 100 triples")


class TestA3GradientCheck:
    def test_gradient_vs_central_differences(self):
        rng = np.random.default_rng(44)
        step = 1e-6
        worst = 0.0
        for _ in range(50):
            I = rng.uniform(0.2, 1.5, (8, 8))
            k = rng.random((3, 3))
            k /= k.sum()
            B = np.clip(convolve(I, k) + 0.05 * rng.standard_normal((8, 8)), 0.05, None)
            M = rng.uniform(0.3, 1.0, (8, 8))
            g = poisson_nll_grad(B, I, k, M)
            fd = np.zeros_like(I)
            for i in range(8):
                for j in range(8):
                    up = I.copy()
                    up[i, j] += step
                    dn = I.copy()
                    dn[i, j] -= step
                    fd[i, j] = (poisson_nll(B, up, k, M).nll
                                - poisson_nll(B, dn, k, M).nll) / (2 * step)
            rel = np.abs(fd - g) / np.maximum(np.maximum(np.abs(fd), np.abs(g)), 1e-6)
            worst = max(worst, float(rel.max()))
        check("A3", worst <= 1e-4,
              f"max per-pixel relative error = {worst:.2e} over 50 instances")


class TestA4ClassicRl:
    def test_monotone_nll_and_fixed_point(self, noiseless_blur_set):
        worst_increase = -np.inf
        worst_move = 0.0
        for blurry, sharp, kernel in noiseless_blur_set:
            _, trace = classic_rl(blurry, kernel, iterations=50, record_trace=True)
            objs = [poisson_nll(blurry, blurry, kernel, np.ones_like(blurry)).total]
            objs += trace.objectives()
            worst_increase = max(worst_increase,
                                 max(b - a for a, b in zip(objs, objs[1:])))
            one = rl_update(sharp, blurry, kernel, np.ones_like(sharp),
                            np.zeros_like(sharp))
            worst_move = max(worst_move, float(np.abs(one - sharp).max()))
        check("A4", worst_increase <= 1e-9 and worst_move <= 1e-6,
              f"max per-step NLL increase = {worst_increase:.2e}, "
              f"max one-step move from GT = {worst_move:.2e} on 20 fixtures")


class TestA5ReductionIdentity:
    def test_unit_map_equals_classic_rl(self, saturated_fixture_set):
        identical = 0
        for pair in saturated_fixture_set[:10]:
            a, _ = classic_rl(pair.blurry, pair.kernel, iterations=30)
            cfg = SolverConfig(iterations=30,
                               choice=EstimatorChoice(map_kind="unit", prior_kind="none"))
            b, _ = solve(pair.blurry, pair.kernel, cfg)
            identical += int(np.array_equal(a, b))
        check("A5", identical == 10,
              f"bit-identical on {identical}/10 fixtures")


@pytest.fixture(scope="module")
def ablation_runs(saturated_fixture_set):
    """Q=40 naive-map runs (traced) plus Q=30 unit and smooth-clip runs."""
    start = time.perf_counter()
    results = []
    for pair in saturated_fixture_set:
        row = {}
        cfg = SolverConfig(iterations=40, record_trace=True, keep_images=True,
                           choice=EstimatorChoice(map_kind="naive_threshold",
                                                  prior_kind="none"))
        _, trace = solve(pair.blurry, pair.kernel, cfg, reference_map=pair.map_gt)
        psnrs = [psnr(np.clip(r.image, 0, 1), pair.gt) for r in trace.records]
        row["naive_30"] = psnrs[29]
        row["naive_40"] = psnrs[39]
        row["mse_10"] = trace.at(10).map_mse
        row["mse_30"] = trace.at(30).map_mse
        for kind in ("unit", "smooth_clip"):
            cfg = SolverConfig(iterations=30,
                               choice=EstimatorChoice(map_kind=kind, prior_kind="none"))
            out, _ = solve(pair.blurry, pair.kernel, cfg)
            row[f"{kind}_30"] = psnr(np.clip(out, 0, 1), pair.gt)
        results.append(row)
    return {"rows": results, "elapsed": time.perf_counter() - start}


class TestA6SaturationMapBenefit:
    def test_map_estimators_beat_unit_map(self, saturated_fixture_set, ablation_runs):
        min_clip = min(p.meta["clipped_fraction"] for p in saturated_fixture_set)
        enlarges = [p.meta["enlarge"] for p in saturated_fixture_set]
        rows = ablation_runs["rows"]
        naive = np.mean([r["naive_30"] for r in rows])
        smooth = np.mean([r["smooth_clip_30"] for r in rows])
        unit = np.mean([r["unit_30"] for r in rows])
        elapsed = ablation_runs["elapsed"]
        ok = (min_clip >= 0.05 and min(enlarges) >= 2.0 and max(enlarges) <= 5.0
              and naive - unit >= 0.3 and smooth >= unit and elapsed < 120.0)
        check("A6", ok,
              f"naive-unit = {naive - unit:+.2f} dB (need >= 0.3), "
              f"smooth-unit = {smooth - unit:+.2f} dB, min clipped = {min_clip:.1%}, "
              f"runs took {elapsed:.0f}s (< 120)")


class TestA7PriorBenefit:
    def test_hyper_laplacian_prior_helps_on_noisy_fixtures(self, saturated_fixture_set):
        diffs = []
        for pair in saturated_fixture_set:
            assert pair.meta["noise_sigma"] == pytest.approx(0.01)
            scores = {}
            for prior in ("hyper_laplacian", "none"):
                cfg = SolverConfig(iterations=30,
                                   choice=EstimatorChoice(map_kind="naive_threshold",
                                                          prior_kind=prior,
                                                          prior_weight=0.003))
                out, _ = solve(pair.blurry, pair.kernel, cfg)
                scores[prior] = psnr(np.clip(out, 0, 1), pair.gt)
            diffs.append(scores["hyper_laplacian"] - scores["none"])
        diffs = np.array(diffs)
        check("A7", diffs.mean() >= 0.0 and diffs.min() >= -0.5,
              f"mean prior gain = {diffs.mean():+.3f} dB, "
              f"worst per-image = {diffs.min():+.3f} dB (need >= -0.5)")


class TestA8MapAccuracyTrend:
    def test_map_mse_decreases_between_10_and_30(self, ablation_runs):
        rows = ablation_runs["rows"]
        ok_count = sum(r["mse_30"] <= r["mse_10"] for r in rows)
        check("A8", ok_count >= 0.8 * len(rows),
              f"map MSE(30) <= map MSE(10) on {ok_count}/{len(rows)} fixtures "
              f"(need >= 80%)")


class TestA9ConvergencePlateau:
    def test_mean_psnr_plateau_between_30_and_40(self, ablation_runs):
        rows = ablation_runs["rows"]
        m30 = np.mean([r["naive_30"] for r in rows])
        m40 = np.mean([r["naive_40"] for r in rows])
        check("A9", abs(m40 - m30) <= 0.1,
              f"|mean PSNR(Q=40) - mean PSNR(Q=30)| = {abs(m40 - m30):.3f} dB (need <= 0.1)")


class TestA10InferenceScaffolding:
    def test_determinism_zero_weights_roundtrip_and_golden_parity(self, tmp_path):
        rng = np.random.default_rng(45)
        x2 = rng.random((1, 2, 16, 16))
        x1 = rng.random((1, 1, 16, 16))

        w_men = random_weights("MEN", 1, seed=7)
        w_pen = random_weights("PEN", 1, seed=8)
        det = (np.array_equal(men_forward(x2, w_men), men_forward(x2, w_men))
               and np.array_equal(pen_forward(x1, w_pen), pen_forward(x1, w_pen)))

        zm = men_forward(x2, zero_weights("MEN", 1))
        zp = pen_forward(x1, zero_weights("PEN", 1))
        zeros_ok = np.allclose(zm, 0.5, atol=1e-15) and np.array_equal(zp, np.zeros_like(zp))

        path = tmp_path / "rt.sdnw"
        save_weights(path, w_men)
        back = load_weights(path)
        rt_ok = all(np.array_equal(w_men.entries[k], back.entries[k])
                    for k in w_men.entries)

        worst = 0.0
        fixtures = sorted(GOLDEN_DIR.glob("*_input.sdbf"))
        assert fixtures, f"no golden fixtures under {GOLDEN_DIR}"
        for input_path in fixtures:
            stem = input_path.name.replace("_input.sdbf", "")
            weights = load_weights(GOLDEN_DIR / f"{stem}.sdnw")
            x = load_sdbf(input_path).transpose(2, 0, 1)[None]
            expected = load_sdbf(GOLDEN_DIR / f"{stem}_expected.sdbf").transpose(2, 0, 1)[None]
            forward = men_forward if weights.arch == "MEN" else pen_forward
            got = forward(x, weights)
            worst = max(worst, float(np.abs(got - expected).max()))

        check("A10", det and zeros_ok and rt_ok and worst <= 1e-4,
              f"deterministic={det}, zero-weight outputs ok={zeros_ok}, "
              f"SDNW round trip ok={rt_ok}, golden parity max diff = {worst:.2e} "
              f"({len(fixtures)} fixtures)")


class TestA11EndToEndCli:
    def test_pipeline_deterministic_and_fast(self, tmp_path):
        start = time.perf_counter()
        src = tmp_path / "src"
        src.mkdir()
        for i in range(5):
            save_png(src / f"scene{i}.png", make_night_scene(64, 600 + i), bitdepth=16)

        import hashlib

        def run(root):
            fixdir = root / "fx"
            assert cli_main(["synth", str(src), "--out", str(fixdir), "--seed", "12",
                             "--kernel-size-range", "11", "11"]) == 0
            restored = root / "restored"
            for pair in sorted(fixdir.iterdir()):
                if not (pair / "blurry.png").exists():
                    continue
                assert cli_main(["deblur", "--blurry", str(pair / "blurry.png"),
                                 "--kernel", str(pair / "kernel.txt"),
                                 "--out", str(restored / f"{pair.name}.png")]) == 0
            assert cli_main(["eval", "--fixtures", str(fixdir),
                             "--restored", str(restored),
                             "--out", str(root / "report.json")]) == 0
            digest = hashlib.sha256()
            for path in sorted(root.rglob("*")):
                if path.is_file():
                    digest.update(str(path.relative_to(root)).encode())
                    digest.update(path.read_bytes())
            return digest.hexdigest()

        d1 = run(tmp_path / "run1")
        d2 = run(tmp_path / "run2")
        pipeline_elapsed = time.perf_counter() - start

        big = make_night_scene(256, 999)
        kpath = tmp_path / "k.txt"
        from satdeblur.io import save_kernel
        from satdeblur.synth import generate_kernel

        save_kernel(kpath, generate_kernel(15, 5))
        bpath = tmp_path / "big.png"
        save_png(bpath, big, bitdepth=16)
        t0 = time.perf_counter()
        assert cli_main(["deblur", "--blurry", str(bpath), "--kernel", str(kpath),
                         "--out", str(tmp_path / "big_out.png"),
                         "--iterations", "30"]) == 0
        single_elapsed = time.perf_counter() - t0

        ok = d1 == d2 and pipeline_elapsed < 60.0 and single_elapsed < 5.0
        check("A11", ok,
              f"pipeline deterministic={d1 == d2}, pipeline {pipeline_elapsed:.1f}s "
              f"(< 60), 256x256 Q=30 deblur {single_elapsed:.2f}s (< 5)")
