"""Image and kernel primitives: validation, circular convolution, adjoints.

Conventions used throughout the package:

* Images are numpy float arrays shaped ``(H, W)`` or ``(H, W, C)`` with
  ``C in {1, 3}``.  Observed images live in ``[0, 1]``; sharp HDR images
  are only bounded below by 0.  Solver math runs in float64.
* Kernels are 2-D float arrays with odd dimensions, non-negative taps and
  unit sum (within ``KERNEL_SUM_TOL``).
* Convolution is circular (periodic).  Under this boundary the kernel
  matrix is doubly stochastic, so ``ones ⊗ k_adj == ones`` holds exactly
  and ``adjoint_convolve`` is the true transpose of ``convolve``.
"""

from __future__ import annotations

import numpy as np

from .errors import KernelError, ShapeError

# Single source of truth for the guard added inside logs and denominators.
EPSILON = 1e-12

KERNEL_SUM_TOL = 1e-6


def validate_image(img: np.ndarray, *, observed: bool = False, name: str = "image") -> np.ndarray:
    """Check image invariants and return the array as float64.

    ``observed=True`` additionally enforces the [0, 1] range of sensor
    images; HDR sharp images are only required to be non-negative.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ShapeError(f"{name}: expected 2-D or 3-D array, got ndim={img.ndim}")
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise ShapeError(f"{name}: channel count must be 1 or 3, got {img.shape[2]}")
    if img.size == 0:
        raise ShapeError(f"{name}: empty array")
    if not np.isfinite(img).all():
        raise ShapeError(f"{name}: contains non-finite values")
    if img.min() < 0:
        raise ShapeError(f"{name}: contains negative values")
    if observed and img.max() > 1.0 + 1e-9:
        raise ShapeError(f"{name}: observed image exceeds 1 (max={img.max():.6g})")
    return img


def validate_kernel(k: np.ndarray) -> np.ndarray:
    """Check kernel invariants (2-D, odd-sized, taps >= 0, sum == 1)."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2:
        raise KernelError(f"kernel must be 2-D, got ndim={k.ndim}")
    kh, kw = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise KernelError(f"kernel dimensions must be odd, got {kh}x{kw}")
    if not np.isfinite(k).all():
        raise KernelError("kernel contains non-finite taps")
    if k.min() < 0:
        raise KernelError(f"kernel has negative taps (min={k.min():.3g})")
    s = k.sum()
    if abs(s - 1.0) > KERNEL_SUM_TOL:
        raise KernelError(f"kernel taps must sum to 1 within {KERNEL_SUM_TOL}, got {s:.8f}")
    return k


def flip_kernel(k: np.ndarray) -> np.ndarray:
    """Reverse the kernel along both axes (the adjoint kernel).

    Applying the flip twice returns the original kernel.
    """
    k = validate_kernel(k)
    return k[::-1, ::-1].copy()


def delta_kernel(size: int = 1) -> np.ndarray:
    """Identity kernel: 1 at the center tap, 0 elsewhere."""
    if size % 2 == 0:
        raise KernelError(f"kernel size must be odd, got {size}")
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def _check_kernel_fits(shape, k):
    if k.shape[0] > shape[0] or k.shape[1] > shape[1]:
        raise KernelError(
            f"kernel {k.shape[0]}x{k.shape[1]} larger than image {shape[0]}x{shape[1]}"
        )


def _embed_kernel(k: np.ndarray, shape) -> np.ndarray:
    """Pad the kernel to the image shape with its center tap moved to (0, 0)."""
    kh, kw = k.shape
    pad = np.zeros(shape, dtype=np.float64)
    pad[:kh, :kw] = k
    pad = np.roll(pad, -(kh // 2), axis=0)
    pad = np.roll(pad, -(kw // 2), axis=1)
    return pad


def _convolve_fft_2d(plane: np.ndarray, otf: np.ndarray, shape) -> np.ndarray:
    return np.fft.irfft2(np.fft.rfft2(plane) * otf, s=shape)


def _convolve_direct_2d(plane: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Direct circular convolution: accumulate one rolled copy per tap."""
    kh, kw = k.shape
    ch, cw = kh // 2, kw // 2
    out = np.zeros_like(plane)
    for u in range(kh):
        for v in range(kw):
            tap = k[u, v]
            if tap == 0.0:
                continue
            out += tap * np.roll(plane, (u - ch, v - cw), axis=(0, 1))
    return out


def convolve(img: np.ndarray, k: np.ndarray, *, method: str = "fft") -> np.ndarray:
    """Circular convolution of an image with a normalized kernel.

    Color images are convolved per channel with the same kernel.  The
    ``fft`` and ``direct`` paths agree to ~1e-15; ``direct`` exists as the
    independently-checkable reference path.
    """
    img = np.asarray(img, dtype=np.float64)
    k = validate_kernel(k)
    if img.ndim not in (2, 3):
        raise ShapeError(f"expected 2-D or 3-D image, got ndim={img.ndim}")
    _check_kernel_fits(img.shape[:2], k)

    planes = img[..., None] if img.ndim == 2 else img
    shape = planes.shape[:2]
    if method == "fft":
        otf = np.fft.rfft2(_embed_kernel(k, shape))
        out = np.stack(
            [_convolve_fft_2d(planes[..., c], otf, shape) for c in range(planes.shape[2])],
            axis=-1,
        )
    elif method == "direct":
        out = np.stack(
            [_convolve_direct_2d(planes[..., c], k) for c in range(planes.shape[2])],
            axis=-1,
        )
    else:
        raise ValueError(f"unknown method {method!r}")
    return out[..., 0] if img.ndim == 2 else out


def adjoint_convolve(img: np.ndarray, k: np.ndarray, *, method: str = "fft") -> np.ndarray:
    """Convolve with the flipped kernel: the transpose of :func:`convolve`."""
    return convolve(img, flip_kernel(k), method=method)


class KernelOperator:
    """Cached-FFT circular convolution for a fixed kernel and image shape.

    Iterative solvers apply the same kernel hundreds of times; caching the
    kernel transform makes each application two FFTs instead of three.
    Instances are immutable after construction and safe to share.
    """

    def __init__(self, kernel: np.ndarray, shape):
        self.kernel = validate_kernel(kernel)
        self.shape = (int(shape[0]), int(shape[1]))
        _check_kernel_fits(self.shape, self.kernel)
        self._otf = np.fft.rfft2(_embed_kernel(self.kernel, self.shape))
        # Real even/odd structure is not guaranteed, but conj(OTF) is the
        # exact transform of the flipped kernel for odd-sized kernels.
        self._otf_adj = np.conj(self._otf)

    def _apply(self, img, otf):
        img = np.asarray(img, dtype=np.float64)
        if img.shape[:2] != self.shape:
            raise ShapeError(f"operator built for {self.shape}, got {img.shape[:2]}")
        if img.ndim == 2:
            return _convolve_fft_2d(img, otf, self.shape)
        return np.stack(
            [_convolve_fft_2d(img[..., c], otf, self.shape) for c in range(img.shape[2])],
            axis=-1,
        )

    def forward(self, img: np.ndarray) -> np.ndarray:
        """img ⊗ K"""
        return self._apply(img, self._otf)

    def adjoint(self, img: np.ndarray) -> np.ndarray:
        """img ⊗ K_adj (flipped kernel)"""
        return self._apply(img, self._otf_adj)


def edge_taper(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Blend image borders toward their blurred version.

    Optional preprocessing for real photographs: circular convolution
    wraps content across borders, which shows up as ringing when the
    opposite edges differ.  Tapering the borders toward the blurred image
    suppresses those artifacts.  The interior (more than one kernel extent
    away from every border) is returned unchanged.
    """
    img = np.asarray(img, dtype=np.float64)
    k = validate_kernel(k)
    _check_kernel_fits(img.shape[:2], k)

    def taper_profile(n, proj):
        # Autocorrelation of the kernel projection rises from ~0 to 1 over
        # one kernel extent; use it as the border blend-in ramp.
        acorr = np.correlate(proj, proj, mode="full")
        acorr = acorr / acorr.max()
        half = len(proj) - 1
        w = np.ones(n)
        ramp = acorr[:half]
        if half > 0 and n >= 2 * half:
            w[:half] = ramp
            w[n - half:] = ramp[::-1]
        return w

    wh = taper_profile(img.shape[0], k.sum(axis=1))
    ww = taper_profile(img.shape[1], k.sum(axis=0))
    alpha = np.outer(wh, ww)
    if img.ndim == 3:
        alpha = alpha[..., None]
    blurred = convolve(img, k)
    return alpha * img + (1.0 - alpha) * blurred
