"""File formats: PNG images, SDBF raw float rasters, plain-text kernels.

SDBF ("saturated deblur float") layout, little-endian:
    magic "SDBF" | u32 height | u32 width | u32 channels | float32 data
Data is row-major with the channel as the fastest axis, i.e. a dump of an
``(H, W, C)`` float32 array.
"""

from __future__ import annotations

import os
import struct
import tempfile
import warnings
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import FormatError, KernelError
from .image import validate_image, validate_kernel


def atomic_write(path, write_fn) -> None:
    """Write through a temp file in the target directory, then rename.

    ``write_fn`` receives the temporary path (a string).  Readers never
    observe a half-written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)

SDBF_MAGIC = b"SDBF"

# Renormalization larger than this triggers a loader warning.
KERNEL_RENORM_WARN = 1e-3


def load_png(path) -> np.ndarray:
    """Load an 8- or 16-bit PNG, linearly mapped to [0, 1], as (H, W, C)."""
    with PILImage.open(path) as im:
        if im.mode == "I;16":
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode in ("L", "RGB"):
            arr = np.asarray(im, dtype=np.float64) / 255.0
        elif im.mode in ("I", "I;16B"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[..., None]
    return validate_image(arr, observed=True, name=str(path))


def save_png(path, img: np.ndarray, *, bitdepth: int = 16) -> None:
    """Save an image in [0, 1] as an 8- or 16-bit PNG (rounded, clipped)."""
    img = validate_image(img, observed=True, name=str(path))
    if img.ndim == 2:
        img = img[..., None]
    if bitdepth == 8:
        data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        pil = PILImage.fromarray(data[..., 0] if data.shape[2] == 1 else data)
    elif bitdepth == 16:
        if img.shape[2] != 1:
            # Pillow has no 16-bit RGB mode; color stays at 8 bits (use
            # SDBF when full precision matters).
            raise ValueError("16-bit PNG output is grayscale-only; use bitdepth=8 or SDBF")
        data = np.clip(np.rint(img * 65535.0), 0, 65535).astype(np.uint16)
        pil = PILImage.fromarray(data[..., 0])  # uint16 maps to 16-bit grayscale
    else:
        raise ValueError(f"bitdepth must be 8 or 16, got {bitdepth}")
    pil.save(path)


def load_image(path) -> np.ndarray:
    """Load a PNG or SDBF image by extension."""
    path = Path(path)
    if path.suffix.lower() == ".sdbf":
        return validate_image(load_sdbf(path), name=str(path))
    return load_png(path)


def save_image(path, img: np.ndarray, *, bitdepth: int = 16) -> None:
    """Save to PNG or SDBF by extension."""
    path = Path(path)
    if path.suffix.lower() == ".sdbf":
        save_sdbf(path, img)
    else:
        save_png(path, img, bitdepth=bitdepth)


def load_sdbf(path) -> np.ndarray:
    """Read an SDBF raster as a float64 (H, W, C) array."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != SDBF_MAGIC:
        raise FormatError(f"{path}: not an SDBF file")
    h, w, c = struct.unpack_from("<III", raw, 4)
    expected = 16 + 4 * h * w * c
    if h < 1 or w < 1 or c < 1:
        raise FormatError(f"{path}: invalid SDBF dimensions {h}x{w}x{c}")
    if len(raw) != expected:
        raise FormatError(f"{path}: truncated SDBF file ({len(raw)} bytes, expected {expected})")
    data = np.frombuffer(raw, dtype="<f4", offset=16, count=h * w * c)
    return data.reshape(h, w, c).astype(np.float64)


def save_sdbf(path, arr: np.ndarray) -> None:
    """Write a float raster (any channel count) as SDBF (float32)."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise FormatError(f"SDBF rasters are 2-D or 3-D, got ndim={arr.ndim}")
    h, w, c = arr.shape
    payload = struct.pack("<III", h, w, c) + arr.astype("<f4").tobytes()
    Path(path).write_bytes(SDBF_MAGIC + payload)


def load_kernel(path) -> np.ndarray:
    """Read a plain-text kernel: first line ``kh kw``, then kh rows of taps.

    Taps are renormalized to sum 1; a correction above 1e-3 warns because
    it usually means the file was edited or truncated.
    """
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty kernel file")
    try:
        kh, kw = (int(tok) for tok in lines[0].split())
    except ValueError as exc:
        raise FormatError(f"{path}: expected 'kh kw' header, got {lines[0]!r}") from exc
    if len(lines) - 1 != kh:
        raise FormatError(f"{path}: expected {kh} tap rows, found {len(lines) - 1}")
    try:
        rows = [[float(tok) for tok in ln.split()] for ln in lines[1:]]
    except ValueError as exc:
        raise FormatError(f"{path}: malformed tap value") from exc
    if any(len(r) != kw for r in rows):
        raise FormatError(f"{path}: tap rows must have {kw} entries")
    k = np.array(rows, dtype=np.float64)
    s = k.sum()
    if s <= 0 or not np.isfinite(s):
        raise KernelError(f"{path}: kernel sum {s} is not positive")
    if abs(s - 1.0) > KERNEL_RENORM_WARN:
        warnings.warn(f"{path}: kernel sum {s:.6f} renormalized to 1", stacklevel=2)
    return validate_kernel(k / s)


def save_kernel(path, k: np.ndarray) -> None:
    k = validate_kernel(k)
    kh, kw = k.shape
    lines = [f"{kh} {kw}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in k]
    Path(path).write_text("\n".join(lines) + "\n")
