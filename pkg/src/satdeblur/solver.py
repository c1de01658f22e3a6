"""Alternating latent-map / latent-image deconvolution.

Each iteration estimates a latent map M and a prior field P from the
current image, then applies the multiplicative update

    I_next = [ I ∘ ((B / (I ⊗ K + eps) - M + 1) ⊗ K_adj) ] / (1 + P)

starting from I = B.  With the unit map and zero prior this is exactly
classic Richardson-Lucy deconvolution.

Numerics beyond the update formula:

* The bracketed factor is mathematically non-negative (ratio >= 0,
  M <= 1) but FFT roundoff can leave values like -1e-17 after the
  adjoint convolution; those are floored at 0 so iterates stay
  non-negative.
* Iterates are clamped to [0, clamp_max] (default 10: HDR headroom above
  the observed range) unless disabled.  Both choices are convention, not
  derivation; the fixed iteration count Q is the only stop criterion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalError, SatDeblurError, ShapeError
from .estimators import EstimatorChoice, make_map_estimator, make_prior_estimator
from .image import EPSILON, KernelOperator, validate_image
from .objective import poisson_nll

CLAMP_MAX_DEFAULT = 10.0


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 30
    epsilon: float = EPSILON
    choice: EstimatorChoice = field(default_factory=EstimatorChoice)
    clamp_output: bool = True
    clamp_max: float = CLAMP_MAX_DEFAULT
    record_trace: bool = False
    keep_images: bool = False   # store I and I-bar copies in the trace

    def __post_init__(self):
        if self.iterations < 1:
            raise ShapeError(f"iteration count must be >= 1, got {self.iterations}")
        if self.epsilon <= 0:
            raise ShapeError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class TraceRecord:
    iteration: int                    # 1-based
    objective: float                  # data term at the new iterate
    map_mse: Optional[float] = None   # vs the reference map, when given
    intermediate: Optional[np.ndarray] = None
    image: Optional[np.ndarray] = None


@dataclass
class SolverTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def at(self, iteration: int) -> TraceRecord:
        rec = self.records[iteration - 1]
        assert rec.iteration == iteration
        return rec

    def objectives(self):
        return [r.objective for r in self.records]

    def map_mses(self):
        return [r.map_mse for r in self.records]

    def to_jsonl(self) -> str:
        lines = []
        for r in self.records:
            row = {"iteration": r.iteration, "objective": r.objective}
            if r.map_mse is not None:
                row["map_mse"] = r.map_mse
            lines.append(json.dumps(row))
        return "\n".join(lines) + "\n"


def _update_factor(I, B, M, op: KernelOperator, epsilon: float) -> np.ndarray:
    ratio = B / (op.forward(I) + epsilon)
    factor = op.adjoint(ratio - M + 1.0)
    # Floor FFT roundoff; see module docstring.
    np.maximum(factor, 0.0, out=factor)
    return factor


def rl_update(I, B, K, M, P, *, epsilon: float = EPSILON,
              clamp_max: Optional[float] = CLAMP_MAX_DEFAULT,
              op: Optional[KernelOperator] = None,
              iteration: Optional[int] = None) -> np.ndarray:
    """One multiplicative update step.  Requires 1 + P > 0 everywhere."""
    I = np.asarray(I, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if not (I.shape == B.shape == M.shape == P.shape):
        raise ShapeError(
            f"shape mismatch: I{I.shape}, B{B.shape}, M{M.shape}, P{P.shape}")
    if op is None:
        op = KernelOperator(K, I.shape[:2])
    with np.errstate(divide="ignore", invalid="ignore"):
        out = I * _update_factor(I, B, M, op, epsilon) / (1.0 + P)
    if not np.isfinite(out).all():
        raise NumericalError(
            f"non-finite iterate{'' if iteration is None else f' at iteration {iteration}'}",
            iteration=iteration)
    if clamp_max is not None:
        np.clip(out, 0.0, clamp_max, out=out)
    return out


def intermediate_image(I, B, K, M, *, epsilon: float = EPSILON,
                       op: Optional[KernelOperator] = None) -> np.ndarray:
    """The update numerator (before prior division): I-bar diagnostics."""
    I = np.asarray(I, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if op is None:
        op = KernelOperator(K, I.shape[:2])
    return I * _update_factor(I, B, M, op, epsilon)


def solve(B, K, cfg: SolverConfig, *, reference_map=None, reference_image=None):
    """Run the full alternating loop from I = B; returns (I_Q, trace).

    ``reference_map`` (the synthesizer's ground-truth map) enables the
    per-iteration map-MSE trace; ``reference_image`` is required by the
    oracle map kinds.
    """
    B = validate_image(B, observed=True, name="blurry image")
    op = KernelOperator(K, B.shape[:2])
    map_est = make_map_estimator(cfg.choice, B, op, reference=reference_image)
    prior_est = make_prior_estimator(cfg.choice)
    if reference_map is not None:
        reference_map = np.asarray(reference_map, dtype=np.float64)
        if reference_map.shape != B.shape:
            raise ShapeError(
                f"reference map shape {reference_map.shape} != image shape {B.shape}")

    I = B.copy()
    trace = SolverTrace()
    clamp = cfg.clamp_max if cfg.clamp_output else None
    for t in range(cfg.iterations):
        try:
            M = map_est(I)
            P = prior_est(I)
        except SatDeblurError as exc:
            exc.args = (f"iteration {t + 1}: {exc.args[0] if exc.args else exc}",
                        *exc.args[1:])
            raise
        if cfg.record_trace and cfg.keep_images:
            ibar = intermediate_image(I, B, K, M, epsilon=cfg.epsilon, op=op)
        I = rl_update(I, B, K, M, P, epsilon=cfg.epsilon, clamp_max=clamp,
                      op=op, iteration=t + 1)
        if cfg.record_trace:
            rec = TraceRecord(
                iteration=t + 1,
                objective=poisson_nll(B, I, K, M, epsilon=cfg.epsilon, op=op).total,
                map_mse=None if reference_map is None else float(np.mean((M - reference_map) ** 2)),
            )
            if cfg.keep_images:
                rec.intermediate = ibar
                rec.image = I.copy()
            trace.records.append(rec)
    return I, trace


def classic_rl(B, K, iterations: int = 30, *, epsilon: float = EPSILON,
               clamp_output: bool = True, record_trace: bool = False):
    """Classic Richardson-Lucy: the unit-map, zero-prior case of solve().

    Shares the exact code path with :func:`solve`, so the two are
    bit-identical by construction.
    """
    cfg = SolverConfig(iterations=iterations, epsilon=epsilon,
                       choice=EstimatorChoice(map_kind="unit", prior_kind="none"),
                       clamp_output=clamp_output, record_trace=record_trace)
    return solve(B, K, cfg)
