"""Latent-map and prior-field estimators.

A latent map M in [0,1] rescales the blur forward model per pixel so that
clipped (saturated) observations stay consistent with it; a prior field is
the per-pixel derivative of an image prior, entering the multiplicative
update's denominator as ``1 + field``.

Map estimators come in analytic flavors (unit, naive threshold, smooth
clip), oracle flavors that need the ground-truth latent image (ratio
oracle and its binarized variant, used for evaluation and upper-bound
ablations), and a learned CNN flavor.  Prior estimators are the analytic
hyper-Laplacian gradient prior and a learned CNN.

The ``*_rule`` functions operate on a precomputed ``c = I ⊗ K`` so the
solver can reuse its cached convolution; the public estimators compose the
convolution themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .image import EPSILON, KernelOperator, convolve
from . import nn as _nn

# Keeps 1 + field strictly positive so the update denominator cannot
# flip sign.  Must stay < 1.
PRIOR_FIELD_CAP = 0.5

NAIVE_THRESHOLD_DEFAULT = 0.9
SMOOTH_CLIP_SHARPNESS_DEFAULT = 50.0
HYPER_LAPLACIAN_WEIGHT_DEFAULT = 0.003
HYPER_LAPLACIAN_ALPHA_DEFAULT = 0.8

# Smoothing floor inside |gradient|**(alpha-2); alpha < 1 makes the raw
# derivative blow up at zero gradients.
_GRAD_GUARD = 1e-4


def map_unit(shape) -> np.ndarray:
    """All-ones map: disables saturation handling (plain linear model)."""
    return np.ones(shape, dtype=np.float64)


def naive_threshold_rule(c: np.ndarray, v: float = NAIVE_THRESHOLD_DEFAULT) -> np.ndarray:
    """M = 1 where c <= v, else v / c.  Ties go to the unit branch."""
    if v <= 0:
        raise ConfigError(f"naive threshold v must be positive, got {v}")
    c = np.asarray(c, dtype=np.float64)
    m = np.where(c <= v, 1.0, v / np.maximum(c, EPSILON))
    return np.clip(m, 0.0, 1.0)


def map_naive_threshold(I, K, v: float = NAIVE_THRESHOLD_DEFAULT) -> np.ndarray:
    return naive_threshold_rule(convolve(I, K), v)


def _softplus(z: np.ndarray) -> np.ndarray:
    # log(1 + exp(z)) without overflow for large z.
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def soft_clip(x: np.ndarray, a: float) -> np.ndarray:
    """Smooth approximation of min(x, 1) with sharpness a.

    C_a(x) = x - softplus(a*(x-1))/a + softplus(-a)/a.  Exactly 0 at x=0,
    approximately x for x << 1, and tends to 1 as x grows; as a -> inf it
    converges to the hard clip.
    """
    if a <= 0:
        raise ConfigError(f"smooth-clip sharpness must be positive, got {a}")
    x = np.asarray(x, dtype=np.float64)
    return x - _softplus(a * (x - 1.0)) / a + _softplus(np.float64(-a)) / a


def smooth_clip_rule(c: np.ndarray, a: float = SMOOTH_CLIP_SHARPNESS_DEFAULT) -> np.ndarray:
    """M = C_a(c) / c: the smooth-clipping stand-in for the hard sensor clip."""
    c = np.asarray(c, dtype=np.float64)
    m = soft_clip(c, a) / np.maximum(c, EPSILON)
    return np.clip(m, 0.0, 1.0)


def map_smooth_clip(I, K, a: float = SMOOTH_CLIP_SHARPNESS_DEFAULT) -> np.ndarray:
    return smooth_clip_rule(convolve(I, K), a)


def map_ratio_oracle(B, I, K, *, epsilon: float = EPSILON) -> np.ndarray:
    """Ground-truth map B / (I ⊗ K) for a reference latent image I.

    Evaluation-only: quantifies how close an estimated map is to the map
    implied by the ground truth, and serves as the upper-bound "oracle"
    variant in ablations.
    """
    B = np.asarray(B, dtype=np.float64)
    conv = convolve(I, K)
    if B.shape != conv.shape:
        raise ShapeError(f"shape mismatch: B{B.shape} vs I⊗K{conv.shape}")
    return np.clip(B / (conv + epsilon), 0.0, 1.0)


def map_binary_mask(B, I, K, *, cutoff: float = 0.99) -> np.ndarray:
    """Binarized ratio oracle: 1 for pixels consistent with the linear
    model, 0 for clipped ones.  Represents weighting-matrix style models
    that exclude saturated pixels; evaluation-only."""
    return (map_ratio_oracle(B, I, K) >= cutoff).astype(np.float64)


def map_men(I, K, weights: "_nn.WeightsBundle") -> np.ndarray:
    """Learned map: MEN forward pass on the stacked (I, I ⊗ K) planes."""
    return men_rule(np.asarray(I, dtype=np.float64), convolve(I, K), weights)


def men_rule(I: np.ndarray, c: np.ndarray, weights: "_nn.WeightsBundle") -> np.ndarray:
    stacked = np.concatenate([_as3d(I), _as3d(c)], axis=-1)
    x = stacked.transpose(2, 0, 1)[None]
    out = _nn.men_forward(x, weights)
    return _from_tensor(out, I)


def cap_prior_field(field_arr: np.ndarray, cap: float = PRIOR_FIELD_CAP) -> np.ndarray:
    if not 0 < cap < 1:
        raise ConfigError(f"prior field cap must be in (0, 1), got {cap}")
    return np.clip(field_arr, -cap, cap)


def _forward_diff(I, axis):
    return np.roll(I, -1, axis=axis) - I


def _forward_diff_adjoint(u, axis):
    return np.roll(u, 1, axis=axis) - u


def hyper_laplacian_energy(I, lam: float = HYPER_LAPLACIAN_WEIGHT_DEFAULT,
                           alpha: float = HYPER_LAPLACIAN_ALPHA_DEFAULT) -> float:
    """Smoothed sparse-gradient prior energy lam * sum rho(grad I).

    rho is the antiderivative of the guarded derivative used by
    :func:`prior_hyper_laplacian`, so that function is this energy's exact
    gradient (checkable by finite differences).  Gradients use forward
    differences with circular wrap, matching the convolution boundary.
    """
    I = np.asarray(I, dtype=np.float64)
    total = 0.0
    for axis in (0, 1):
        s = np.abs(_forward_diff(I, axis)) + _GRAD_GUARD
        rho = s**alpha - (alpha * _GRAD_GUARD / (alpha - 1.0)) * s ** (alpha - 1.0)
        total += float(rho.sum())
    return lam * total


def prior_hyper_laplacian(I, lam: float = HYPER_LAPLACIAN_WEIGHT_DEFAULT,
                          alpha: float = HYPER_LAPLACIAN_ALPHA_DEFAULT,
                          *, cap: float = PRIOR_FIELD_CAP) -> np.ndarray:
    """Derivative field of the smoothed hyper-Laplacian prior, magnitude-capped."""
    if lam < 0:
        raise ConfigError(f"prior weight must be >= 0, got {lam}")
    if not 0 < alpha <= 1:
        raise ConfigError(f"hyper-Laplacian exponent must be in (0, 1], got {alpha}")
    I = np.asarray(I, dtype=np.float64)
    out = np.zeros_like(I)
    for axis in (0, 1):
        g = _forward_diff(I, axis)
        psi = alpha * (np.abs(g) + _GRAD_GUARD) ** (alpha - 2.0) * g
        out += _forward_diff_adjoint(psi, axis)
    return cap_prior_field(lam * out, cap)


def prior_pen(I, weights: "_nn.WeightsBundle", *, cap: float = PRIOR_FIELD_CAP) -> np.ndarray:
    """Learned prior field: PEN forward pass on I, magnitude-capped."""
    I = np.asarray(I, dtype=np.float64)
    x = _as3d(I).transpose(2, 0, 1)[None]
    out = _nn.pen_forward(x, weights)
    return cap_prior_field(_from_tensor(out, I), cap)


def _as3d(img):
    return img[..., None] if img.ndim == 2 else img


def _from_tensor(t, like):
    out = t[0].transpose(1, 2, 0)
    return out[..., 0] if like.ndim == 2 else out


MAP_KINDS = ("unit", "naive_threshold", "smooth_clip", "ratio_oracle", "binary_mask", "men_cnn")
PRIOR_KINDS = ("none", "hyper_laplacian", "pen_cnn")


@dataclass(frozen=True)
class EstimatorChoice:
    """Which map and prior estimators a solver run uses, plus parameters."""

    map_kind: str = "unit"
    prior_kind: str = "none"
    threshold: float = NAIVE_THRESHOLD_DEFAULT          # naive_threshold v
    sharpness: float = SMOOTH_CLIP_SHARPNESS_DEFAULT    # smooth_clip a
    prior_weight: float = HYPER_LAPLACIAN_WEIGHT_DEFAULT
    prior_alpha: float = HYPER_LAPLACIAN_ALPHA_DEFAULT
    prior_cap: float = PRIOR_FIELD_CAP
    men_weights: "_nn.WeightsBundle | None" = field(default=None, repr=False)
    pen_weights: "_nn.WeightsBundle | None" = field(default=None, repr=False)

    def __post_init__(self):
        if self.map_kind not in MAP_KINDS:
            raise ConfigError(f"unknown map kind {self.map_kind!r} (one of {MAP_KINDS})")
        if self.prior_kind not in PRIOR_KINDS:
            raise ConfigError(f"unknown prior kind {self.prior_kind!r} (one of {PRIOR_KINDS})")
        if not 0 < self.threshold <= 1:
            raise ConfigError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.sharpness <= 0:
            raise ConfigError(f"sharpness must be positive, got {self.sharpness}")
        if self.prior_weight < 0:
            raise ConfigError(f"prior weight must be >= 0, got {self.prior_weight}")
        if not 0 < self.prior_alpha <= 1:
            raise ConfigError(f"prior alpha must be in (0, 1], got {self.prior_alpha}")
        if not 0 < self.prior_cap < 1:
            raise ConfigError(f"prior cap must be in (0, 1), got {self.prior_cap}")
        if self.map_kind == "men_cnn" and self.men_weights is None:
            raise ConfigError("map kind 'men_cnn' requires MEN weights")
        if self.prior_kind == "pen_cnn" and self.pen_weights is None:
            raise ConfigError("prior kind 'pen_cnn' requires PEN weights")

    def with_weights(self, men=None, pen=None) -> "EstimatorChoice":
        return replace(self, men_weights=men or self.men_weights,
                       pen_weights=pen or self.pen_weights)


def make_map_estimator(choice: EstimatorChoice, B, op: KernelOperator, reference=None):
    """Build the per-iteration map callable I -> M for a solver run.

    Oracle kinds need ``reference``, the ground-truth latent image; their
    map is then constant across iterations.
    """
    kind = choice.map_kind
    if kind == "unit":
        ones = np.ones_like(np.asarray(B, dtype=np.float64))
        return lambda I: ones
    if kind == "naive_threshold":
        return lambda I: naive_threshold_rule(op.forward(I), choice.threshold)
    if kind == "smooth_clip":
        return lambda I: smooth_clip_rule(op.forward(I), choice.sharpness)
    if kind in ("ratio_oracle", "binary_mask"):
        if reference is None:
            raise ConfigError(f"map kind {kind!r} requires a reference latent image")
        if kind == "ratio_oracle":
            fixed = np.clip(np.asarray(B, dtype=np.float64) / (op.forward(reference) + EPSILON), 0.0, 1.0)
        else:
            ratio = np.asarray(B, dtype=np.float64) / (op.forward(reference) + EPSILON)
            fixed = (np.clip(ratio, 0.0, 1.0) >= 0.99).astype(np.float64)
        return lambda I: fixed
    if kind == "men_cnn":
        return lambda I: men_rule(I, op.forward(I), choice.men_weights)
    raise ConfigError(f"unknown map kind {kind!r}")


def make_prior_estimator(choice: EstimatorChoice):
    """Build the per-iteration prior callable I -> field."""
    kind = choice.prior_kind
    if kind == "none":
        return lambda I: np.zeros_like(np.asarray(I, dtype=np.float64))
    if kind == "hyper_laplacian":
        return lambda I: prior_hyper_laplacian(
            I, choice.prior_weight, choice.prior_alpha, cap=choice.prior_cap)
    if kind == "pen_cnn":
        return lambda I: prior_pen(I, choice.pen_weights, cap=choice.prior_cap)
    raise ConfigError(f"unknown prior kind {kind!r}")
