"""Latent-map Poisson data term and its analytic gradient.

The data term treats the blurry observation as Poisson-distributed around
``M ∘ (I ⊗ K)``.  Dropping the constant log-factorial of the observation,
the negative log-likelihood is

    nll(I) = sum_i [ (M ∘ (I ⊗ K))_i - B_i * log((M ∘ (I ⊗ K))_i + eps) ]

and its gradient with respect to I is

    grad(I) = (M - (M ∘ B) / (M ∘ (I ⊗ K) + eps)) ⊗ K_adj

which is the exact derivative of the eps-guarded nll, so finite
differences of :func:`poisson_nll` reproduce :func:`poisson_nll_grad` to
discretization error.  The multiplicative solver update is a fixed-point
scheme for grad = 0; the gradient is exposed so stationarity can be
checked directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .image import EPSILON, KernelOperator, adjoint_convolve, convolve, validate_kernel


@dataclass(frozen=True)
class ObjectiveValue:
    """Scalar objective split into data term and weighted prior term."""

    nll: float
    prior: float = 0.0

    @property
    def total(self) -> float:
        return self.nll + self.prior


def _check_shapes(B, I, M):
    if B.shape != I.shape or B.shape != M.shape:
        raise ShapeError(f"shape mismatch: B{B.shape}, I{I.shape}, M{M.shape}")
    if not (np.isfinite(B).all() and np.isfinite(I).all() and np.isfinite(M).all()):
        raise ShapeError("non-finite values in objective inputs")


def poisson_nll(B, I, K, M, *, epsilon: float = EPSILON, op: KernelOperator | None = None) -> ObjectiveValue:
    """Evaluate the data term; the prior slot of the result is zero."""
    B = np.asarray(B, dtype=np.float64)
    I = np.asarray(I, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    _check_shapes(B, I, M)
    conv = op.forward(I) if op is not None else convolve(I, K)
    mean = M * conv
    value = float(np.sum(mean - B * np.log(mean + epsilon)))
    return ObjectiveValue(nll=value, prior=0.0)


def poisson_nll_grad(B, I, K, M, *, epsilon: float = EPSILON, op: KernelOperator | None = None) -> np.ndarray:
    """Per-pixel gradient of the eps-guarded data term with respect to I."""
    B = np.asarray(B, dtype=np.float64)
    I = np.asarray(I, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    _check_shapes(B, I, M)
    if op is not None:
        conv = op.forward(I)
        return op.adjoint(M - (M * B) / (M * conv + epsilon))
    validate_kernel(K)
    conv = convolve(I, K)
    return adjoint_convolve(M - (M * B) / (M * conv + epsilon), K)
