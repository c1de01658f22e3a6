import numpy as np
import pytest

from satdeblur.errors import NumericalError, ShapeError
from satdeblur.estimators import EstimatorChoice
from satdeblur.image import EPSILON, convolve, delta_kernel
from satdeblur.metrics import psnr
from satdeblur.objective import poisson_nll, poisson_nll_grad
from satdeblur.solver import (
    SolverConfig,
    classic_rl,
    intermediate_image,
    rl_update,
    solve,
)

from conftest import make_smooth_scene


def loop_rl_update(I, B, K, M, P, eps):
    """Nested-loop transcription of the multiplicative update."""
    h, w = I.shape
    kh, kw = K.shape
    ch, cw = kh // 2, kw // 2

    def circ_conv(x, k):
        out = np.zeros_like(x)
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for u in range(kh):
                    for v in range(kw):
                        acc += k[u, v] * x[(i - u + ch) % h, (j - v + cw) % w]
                out[i, j] = acc
        return out

    ratio = B / (circ_conv(I, K) + eps)
    factor = circ_conv(ratio - M + 1.0, K[::-1, ::-1])
    factor = np.maximum(factor, 0.0)
    return I * factor / (1.0 + P)


class TestRlUpdate:
    def test_exact_fit_is_fixed_point(self):
        rng = np.random.default_rng(0)
        I = rng.uniform(0.1, 0.9, (16, 16, 1))
        K = rng.random((5, 5))
        K /= K.sum()
        B = convolve(I, K)
        out = rl_update(I, B, K, np.ones_like(I), np.zeros_like(I))
        assert np.abs(out - I).max() <= 1e-6

    def test_delta_kernel_one_step_recovery(self):
        rng = np.random.default_rng(1)
        I = rng.uniform(0.2, 1.0, (8, 8, 1))
        B = rng.uniform(0.2, 1.0, (8, 8, 1))
        out = rl_update(I, B, delta_kernel(1), np.ones_like(I), np.zeros_like(I))
        np.testing.assert_allclose(out, B, atol=1e-9)

    def test_matches_loop_oracle_with_half_map(self):
        rng = np.random.default_rng(2)
        I = rng.uniform(0.2, 1.5, (3, 3))
        B = rng.uniform(0.1, 1.0, (3, 3))
        K = rng.random((3, 3))
        K /= K.sum()
        M = np.full((3, 3), 0.5)
        P = rng.uniform(-0.2, 0.2, (3, 3))
        got = rl_update(I, B, K, M, P, clamp_max=None)
        ref = loop_rl_update(I, B, K, M, P, EPSILON)
        assert np.abs(got - ref).max() <= 1e-9

    def test_non_negative_output(self):
        rng = np.random.default_rng(3)
        I = rng.uniform(0.0, 1.0, (12, 12, 1))
        B = rng.uniform(0.0, 1.0, (12, 12, 1))
        K = rng.random((5, 5))
        K /= K.sum()
        M = rng.uniform(0.0, 1.0, I.shape)
        out = rl_update(I, B, K, M, np.zeros_like(I))
        assert out.min() >= 0.0

    def test_clamp_ceiling(self):
        I = np.full((8, 8, 1), 9.9)
        B = np.ones((8, 8, 1))
        K = delta_kernel(3)
        M = np.zeros_like(I)  # forces factor ~ 1/c + 1 > 1
        out = rl_update(I, B, K, M, np.zeros_like(I))
        assert out.max() <= 10.0

    def test_non_finite_raises_with_iteration(self):
        I = np.ones((4, 4))
        B = np.ones((4, 4))
        P = np.full((4, 4), -1.0)  # denominator hits zero
        with pytest.raises(NumericalError) as err:
            rl_update(I, B, delta_kernel(1), np.ones_like(I), P, iteration=7)
        assert err.value.iteration == 7

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            rl_update(np.ones((4, 4)), np.ones((4, 5)), delta_kernel(1),
                      np.ones((4, 4)), np.zeros((4, 4)))


class TestIntermediateImage:
    def test_equals_update_with_zero_prior(self):
        rng = np.random.default_rng(4)
        I = rng.uniform(0.1, 1.0, (8, 8))
        B = rng.uniform(0.1, 1.0, (8, 8))
        K = rng.random((3, 3))
        K /= K.sum()
        M = rng.uniform(0.5, 1.0, I.shape)
        ibar = intermediate_image(I, B, K, M)
        upd = rl_update(I, B, K, M, np.zeros_like(I), clamp_max=None)
        np.testing.assert_array_equal(ibar, upd)

    def test_division_reproduces_update(self):
        rng = np.random.default_rng(5)
        I = rng.uniform(0.1, 1.0, (8, 8))
        B = rng.uniform(0.1, 1.0, (8, 8))
        K = rng.random((3, 3))
        K /= K.sum()
        M = rng.uniform(0.5, 1.0, I.shape)
        P = rng.uniform(-0.3, 0.3, I.shape)
        ibar = intermediate_image(I, B, K, M)
        upd = rl_update(I, B, K, M, P, clamp_max=None)
        assert np.abs(ibar / (1.0 + P) - upd).max() <= 1e-12


class TestClassicRl:
    def test_identical_to_unit_map_solve(self):
        sharp = make_smooth_scene(32, 10)
        K = np.random.default_rng(11).random((5, 5))
        K /= K.sum()
        B = convolve(sharp, K)
        a, _ = classic_rl(B, K, iterations=10)
        cfg = SolverConfig(iterations=10,
                           choice=EstimatorChoice(map_kind="unit", prior_kind="none"))
        b, _ = solve(B, K, cfg)
        assert np.array_equal(a, b)

    def test_improves_psnr_on_noiseless_blur(self):
        sharp = make_smooth_scene(64, 12)
        from satdeblur.synth import generate_kernel

        K = generate_kernel(11, seed=13)
        B = convolve(sharp, K)
        out, _ = classic_rl(B, K, iterations=30)
        assert psnr(np.clip(out, 0, 1), sharp) > psnr(np.clip(B, 0, 1), sharp)

    def test_nll_non_increasing(self):
        sharp = make_smooth_scene(32, 14)
        K = np.random.default_rng(15).random((5, 5))
        K /= K.sum()
        B = convolve(sharp, K)
        _, trace = classic_rl(B, K, iterations=25, record_trace=True)
        objs = trace.objectives()
        assert all(objs[i + 1] <= objs[i] + 1e-9 for i in range(len(objs) - 1))

    def test_stationary_point_has_small_gradient(self):
        # At an exact fit the update is stationary and the data-term
        # gradient vanishes (up to the epsilon guards).
        sharp = make_smooth_scene(24, 16)
        K = np.random.default_rng(17).random((3, 3))
        K /= K.sum()
        B = convolve(sharp, K)
        I = sharp.copy()
        for i in range(3):
            I = rl_update(I, B, K, np.ones_like(I), np.zeros_like(I))
        g = poisson_nll_grad(B, I, K, np.ones_like(I))
        assert np.abs(g).max() <= 1e-5


class TestSolve:
    def test_trace_shape_and_fields(self, saturated_fixture_set):
        pair = saturated_fixture_set[0]
        cfg = SolverConfig(iterations=5, record_trace=True, keep_images=True,
                           choice=EstimatorChoice(map_kind="naive_threshold",
                                                  prior_kind="none"))
        out, trace = solve(pair.blurry, pair.kernel, cfg, reference_map=pair.map_gt)
        assert len(trace) == 5
        assert [r.iteration for r in trace.records] == [1, 2, 3, 4, 5]
        assert all(np.isfinite(r.objective) for r in trace.records)
        assert all(r.map_mse is not None for r in trace.records)
        assert trace.records[0].image.shape == pair.blurry.shape
        assert trace.records[0].intermediate.shape == pair.blurry.shape
        lines = trace.to_jsonl().strip().split("\n")
        assert len(lines) == 5 and '"iteration": 1' in lines[0]

    def test_objective_matches_manual_evaluation(self):
        sharp = make_smooth_scene(24, 18)
        K = np.random.default_rng(19).random((3, 3))
        K /= K.sum()
        B = convolve(sharp, K)
        cfg = SolverConfig(iterations=1, record_trace=True,
                           choice=EstimatorChoice(map_kind="unit", prior_kind="none"))
        out, trace = solve(B, K, cfg)
        manual = poisson_nll(B, out, K, np.ones_like(B)).total
        assert abs(trace.records[0].objective - manual) <= 1e-12

    def test_rejects_hdr_input(self):
        with pytest.raises(ShapeError):
            solve(np.full((8, 8, 1), 1.5), delta_kernel(3), SolverConfig(iterations=1))

    def test_oracle_map_kind_runs(self, saturated_fixture_set):
        pair = saturated_fixture_set[1]
        cfg = SolverConfig(iterations=5,
                           choice=EstimatorChoice(map_kind="ratio_oracle",
                                                  prior_kind="none"))
        out, _ = solve(pair.blurry, pair.kernel, cfg, reference_image=pair.gt)
        assert out.shape == pair.blurry.shape

    def test_config_validation(self):
        with pytest.raises(ShapeError):
            SolverConfig(iterations=0)
        with pytest.raises(ShapeError):
            SolverConfig(epsilon=0.0)


class TestEstimatorFailureContext:
    def test_weight_mismatch_reports_iteration(self, saturated_fixture_set):
        from satdeblur.errors import SatDeblurError
        from satdeblur.nn import zero_weights

        pair = saturated_fixture_set[0]
        # Color weights against a grayscale image: fails inside iteration 1.
        cfg = SolverConfig(iterations=3, choice=EstimatorChoice(
            map_kind="men_cnn", prior_kind="none",
            men_weights=zero_weights("MEN", 3)))
        with pytest.raises(SatDeblurError, match="iteration 1"):
            solve(pair.blurry, pair.kernel, cfg)
