"""Differentiable multiplicative update, unrolled for training.

The update must match the deblurring side numerically (same circular FFT
convolution, epsilon guard, non-negativity floor and iterate ceiling);
the exchanged-fixture parity test pins the agreement to 1e-6.  All
tensors are NCHW; kernels may differ per batch sample.
"""

from __future__ import annotations

import torch

EPSILON = 1e-12
CLAMP_MAX = 10.0
PRIOR_CAP = 0.5


def kernel_otf(kernels, shape) -> torch.Tensor:
    """Frequency response of per-sample kernels on the target image shape.

    ``kernels`` is a list of 2-D tensors (odd sizes, possibly different);
    each is embedded at the origin with its center tap rolled to (0, 0),
    matching the convolution convention of the deblurring side.
    """
    h, w = shape
    planes = []
    for k in kernels:
        kh, kw = k.shape
        pad = k.new_zeros(h, w)
        pad[:kh, :kw] = k
        pad = torch.roll(pad, shifts=(-(kh // 2), -(kw // 2)), dims=(0, 1))
        planes.append(pad)
    return torch.fft.rfft2(torch.stack(planes)[:, None])  # (N,1,H,W//2+1)


def circular_convolve(x, otf):
    """x conv k per sample under the periodic boundary."""
    return torch.fft.irfft2(torch.fft.rfft2(x) * otf, s=x.shape[-2:])


def circular_convolve_adjoint(x, otf):
    return torch.fft.irfft2(torch.fft.rfft2(x) * torch.conj(otf), s=x.shape[-2:])


def rl_update(I, B, otf, M, P, *, epsilon=EPSILON, clamp_max=CLAMP_MAX):
    """One multiplicative step; gradients flow through every operand."""
    ratio = B / (circular_convolve(I, otf) + epsilon)
    factor = circular_convolve_adjoint(ratio - M + 1.0, otf)
    factor = torch.clamp(factor, min=0.0)
    out = I * factor / (1.0 + P)
    if clamp_max is not None:
        out = torch.clamp(out, 0.0, clamp_max)
    return out


def unrolled_solve(B, otf, men, pen, stages, *, fixed_unit_map=False,
                   epsilon=EPSILON, clamp_max=CLAMP_MAX):
    """Run the alternating loop from I = B, returning every stage iterate.

    ``fixed_unit_map=True`` freezes the map at 1 (the prior-only training
    phase).  The prior field is magnitude-capped exactly like the
    inference side caps it.
    """
    I = B
    stages_out = []
    for _ in range(stages):
        if fixed_unit_map:
            M = torch.ones_like(I)
        else:
            conv = circular_convolve(I, otf)
            M = men(torch.cat([I, conv], dim=1))
        P = torch.clamp(pen(I), -PRIOR_CAP, PRIOR_CAP)
        I = rl_update(I, B, otf, M, P, epsilon=epsilon, clamp_max=clamp_max)
        stages_out.append(I)
    return stages_out


def stage_l1_loss(stages, gt):
    """Mean over stages of the per-pixel L1 distance to the ground truth."""
    return torch.stack([(s - gt).abs().mean() for s in stages]).mean()
