"""Wire formats shared with the deblurring toolkit.

These are independent implementations of the interchange files the
toolkit reads and writes: SDBF float rasters, SDNW weight bundles,
plain-text kernels and 16-bit grayscale PNGs.  Both sides must agree on
the bytes, which the cross-component parity tests enforce.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

SDBF_MAGIC = b"SDBF"
SDNW_MAGIC = b"SDNW"
SDNW_VERSION = 1
ARCH_TAGS = {"MEN": 0, "PEN": 1}
ARCH_NAMES = {v: k for k, v in ARCH_TAGS.items()}


def load_sdbf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != SDBF_MAGIC:
        raise ValueError(f"{path}: not an SDBF file")
    h, w, c = struct.unpack_from("<III", raw, 4)
    data = np.frombuffer(raw, dtype="<f4", offset=16, count=h * w * c)
    return data.reshape(h, w, c).astype(np.float64)


def save_sdbf(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    payload = struct.pack("<III", h, w, c) + arr.astype("<f4").tobytes()
    Path(path).write_bytes(SDBF_MAGIC + payload)


def save_sdnw(path, arch: str, entries) -> None:
    """Write named float32 tensors; ``entries`` is an ordered (name, array) list."""
    buf = bytearray()
    buf += SDNW_MAGIC
    buf += struct.pack("<HBI", SDNW_VERSION, ARCH_TAGS[arch], len(entries))
    for name, arr in entries:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += arr.tobytes()
    Path(path).write_bytes(bytes(buf))


def load_sdnw(path):
    raw = Path(path).read_bytes()
    if raw[:4] != SDNW_MAGIC:
        raise ValueError(f"{path}: not an SDNW file")
    version, arch_tag, count = struct.unpack_from("<HBI", raw, 4)
    if version != SDNW_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = 11
    entries = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw, dtype="<f4", offset=pos, count=n).reshape(dims).copy()
        pos += 4 * n
        entries.append((name, arr))
    return ARCH_NAMES[arch_tag], entries


def load_png(path) -> np.ndarray:
    """16- or 8-bit PNG to float64 (H, W, C) in [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im)
    if arr.dtype == np.uint16:
        out = arr.astype(np.float64) / 65535.0
    elif arr.dtype == np.int32:  # Pillow "I" mode for some 16-bit files
        out = arr.astype(np.float64) / 65535.0
    else:
        out = arr.astype(np.float64) / 255.0
    return out[..., None] if out.ndim == 2 else out


def load_kernel(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    kh, kw = (int(t) for t in lines[0].split())
    k = np.array([[float(t) for t in ln.split()] for ln in lines[1:]], dtype=np.float64)
    assert k.shape == (kh, kw), f"{path}: inconsistent kernel shape"
    return k / k.sum()
