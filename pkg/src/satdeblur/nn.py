"""Minimal deterministic CNN forward passes for the two fixed graphs.

Two tiny architectures are supported, identified by their tag:

* ``MEN`` — map estimator: 3x3 stem conv to 32 features, six residual
  blocks (conv3x3 -> ReLU -> conv3x3, additive skip), 3x3 head conv back
  to the image channel count, sigmoid.  Input is the channel-stack of the
  current image and its blurred version, so 2C input channels.
* ``PEN`` — prior estimator: 3-scale U-net with 8/16/32 features, two
  ReLU convs per scale, 2x average-pool downsampling, nearest-neighbor
  upsampling with skip concatenation ([upsampled, skip]) and a linear 3x3
  head.  Inputs whose sides are not multiples of 4 are reflect-padded and
  the output cropped back.

Convolution follows the cross-correlation convention (no kernel flip), so
weights exported from mainstream training frameworks load unchanged.
Arithmetic is float64 on float32-stored weights; forward passes are pure
functions and bit-deterministic.

Weights travel in the SDNW container, little-endian:
    magic "SDNW" | u16 version=1 | u8 arch (0=MEN, 1=PEN) | u32 n_entries
    then per entry: u16 name length | name UTF-8 | u8 rank | u32 dims... |
    float32 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

SDNW_MAGIC = b"SDNW"
SDNW_VERSION = 1
_ARCH_TAGS = {"MEN": 0, "PEN": 1}
_ARCH_NAMES = {v: k for k, v in _ARCH_TAGS.items()}

MEN_FEATURES = 32
MEN_BLOCKS = 6
PEN_FEATURES = (8, 16, 32)


def conv2d(x: np.ndarray, weight: np.ndarray, bias=None, *, stride: int = 1,
           padding: int = 0) -> np.ndarray:
    """Cross-correlation of an (N,C,H,W) tensor with (O,C,kh,kw) filters."""
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D tensors, got {x.ndim}-D and {weight.ndim}-D")
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if ic != c:
        raise ShapeError(f"input has {c} channels but weight expects {ic}")
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        h, w = h + 2 * padding, w + 2 * padding
    if kh > h or kw > w:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]          # (n, c, oh, ow, kh, kw)
    oh, ow = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    out = cols @ weight.reshape(oc, -1).T                # (n*oh*ow, oc)
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)
    return out.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2)


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def avg_pool2(x):
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def upsample_nearest2(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def men_signature(channels: int):
    """Ordered (name, shape) list a MEN weights bundle must match."""
    f = MEN_FEATURES
    sig = [("stem.weight", (f, 2 * channels, 3, 3)), ("stem.bias", (f,))]
    for b in range(MEN_BLOCKS):
        sig += [
            (f"block{b}.conv1.weight", (f, f, 3, 3)), (f"block{b}.conv1.bias", (f,)),
            (f"block{b}.conv2.weight", (f, f, 3, 3)), (f"block{b}.conv2.bias", (f,)),
        ]
    sig += [("head.weight", (channels, f, 3, 3)), ("head.bias", (channels,))]
    return sig


def pen_signature(channels: int):
    """Ordered (name, shape) list a PEN weights bundle must match."""
    f1, f2, f3 = PEN_FEATURES
    sig = []
    for name, cin, cout in [
        ("enc1", channels, f1), ("enc2", f1, f2), ("enc3", f2, f3),
        ("dec2", f3 + f2, f2), ("dec1", f2 + f1, f1),
    ]:
        sig += [
            (f"{name}.conv1.weight", (cout, cin, 3, 3)), (f"{name}.conv1.bias", (cout,)),
            (f"{name}.conv2.weight", (cout, cout, 3, 3)), (f"{name}.conv2.bias", (cout,)),
        ]
    sig += [("head.weight", (channels, f1, 3, 3)), ("head.bias", (channels,))]
    return sig


@dataclass(frozen=True)
class WeightsBundle:
    """Named, shaped float32 tensors for one architecture."""

    arch: str
    channels: int
    entries: dict  # name -> float32 ndarray, insertion-ordered

    def __post_init__(self):
        if self.arch not in _ARCH_TAGS:
            raise FormatError(f"unknown architecture tag {self.arch!r}")
        sig = men_signature(self.channels) if self.arch == "MEN" else pen_signature(self.channels)
        names = list(self.entries)
        expected = [n for n, _ in sig]
        if names != expected:
            raise FormatError(
                f"{self.arch} entry names do not match the architecture signature: "
                f"got {names[:3]}..., expected {expected[:3]}...")
        for name, shape in sig:
            got = self.entries[name].shape
            if got != shape:
                raise FormatError(f"{self.arch} entry {name}: shape {got}, expected {shape}")

    @property
    def in_channels(self) -> int:
        return 2 * self.channels if self.arch == "MEN" else self.channels

    @property
    def out_channels(self) -> int:
        return self.channels

    def __getitem__(self, name):
        return self.entries[name]


def zero_weights(arch: str, channels: int) -> WeightsBundle:
    sig = men_signature(channels) if arch == "MEN" else pen_signature(channels)
    return WeightsBundle(arch, channels,
                         {n: np.zeros(s, dtype=np.float32) for n, s in sig})


def random_weights(arch: str, channels: int, seed: int, scale: float = 0.1) -> WeightsBundle:
    """Seeded fan-in-scaled random weights, mainly for fixtures and tests."""
    rng = np.random.default_rng(seed)
    sig = men_signature(channels) if arch == "MEN" else pen_signature(channels)
    entries = {}
    for name, shape in sig:
        if len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            entries[name] = (scale * rng.standard_normal(shape) / np.sqrt(fan_in)).astype(np.float32)
        else:
            entries[name] = np.zeros(shape, dtype=np.float32)
    return WeightsBundle(arch, channels, entries)


def _conv(x, w, name, act=None):
    out = conv2d(x, w[f"{name}.weight"], w[f"{name}.bias"], padding=1)
    return act(out) if act else out


def men_forward(x: np.ndarray, w: WeightsBundle) -> np.ndarray:
    """MEN forward pass; output strictly inside (0, 1), same H and W."""
    x = np.asarray(x, dtype=np.float64)
    if w.arch != "MEN":
        raise FormatError(f"expected MEN weights, got {w.arch}")
    if x.ndim != 4 or x.shape[1] != w.in_channels:
        raise ShapeError(f"MEN expects (N,{w.in_channels},H,W), got {x.shape}")
    h = _conv(x, w, "stem")
    for b in range(MEN_BLOCKS):
        r = _conv(h, w, f"block{b}.conv1", relu)
        r = _conv(r, w, f"block{b}.conv2")
        h = h + r
    return sigmoid(_conv(h, w, "head"))


def pen_forward(x: np.ndarray, w: WeightsBundle) -> np.ndarray:
    """PEN forward pass; linear output, same H and W as the input."""
    x = np.asarray(x, dtype=np.float64)
    if w.arch != "PEN":
        raise FormatError(f"expected PEN weights, got {w.arch}")
    if x.ndim != 4 or x.shape[1] != w.in_channels:
        raise ShapeError(f"PEN expects (N,{w.in_channels},H,W), got {x.shape}")
    n, c, h0, w0 = x.shape
    ph = (-h0) % 4
    pw = (-w0) % 4
    if ph or pw:
        if h0 < 4 or w0 < 4:
            raise ShapeError(f"PEN input must be at least 4x4, got {h0}x{w0}")
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="reflect")

    e1 = _conv(x, w, "enc1.conv1", relu)
    e1 = _conv(e1, w, "enc1.conv2", relu)
    e2 = _conv(avg_pool2(e1), w, "enc2.conv1", relu)
    e2 = _conv(e2, w, "enc2.conv2", relu)
    e3 = _conv(avg_pool2(e2), w, "enc3.conv1", relu)
    e3 = _conv(e3, w, "enc3.conv2", relu)

    d2 = np.concatenate([upsample_nearest2(e3), e2], axis=1)
    d2 = _conv(d2, w, "dec2.conv1", relu)
    d2 = _conv(d2, w, "dec2.conv2", relu)
    d1 = np.concatenate([upsample_nearest2(d2), e1], axis=1)
    d1 = _conv(d1, w, "dec1.conv1", relu)
    d1 = _conv(d1, w, "dec1.conv2", relu)
    out = _conv(d1, w, "head")
    return out[:, :, :h0, :w0]


def save_weights(path, w: WeightsBundle) -> None:
    buf = bytearray()
    buf += SDNW_MAGIC
    buf += struct.pack("<HBI", SDNW_VERSION, _ARCH_TAGS[w.arch], len(w.entries))
    for name, arr in w.entries.items():
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_weights(path) -> WeightsBundle:
    raw = Path(path).read_bytes()
    if len(raw) < 11 or raw[:4] != SDNW_MAGIC:
        raise FormatError(f"{path}: not an SDNW file")
    version, arch_tag, count = struct.unpack_from("<HBI", raw, 4)
    if version != SDNW_VERSION:
        raise FormatError(f"{path}: unsupported SDNW version {version}")
    if arch_tag not in _ARCH_NAMES:
        raise FormatError(f"{path}: unknown architecture tag {arch_tag}")
    pos = 11
    entries = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode("utf-8")
            if len(raw[pos:pos + nlen]) != nlen:
                raise FormatError(f"{path}: truncated entry name")
            pos += nlen
            (rank,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", raw, pos)
            pos += 4 * rank
            n_values = int(np.prod(dims)) if rank else 1
            end = pos + 4 * n_values
            if end > len(raw):
                raise FormatError(f"{path}: truncated values for entry {name!r}")
            arr = np.frombuffer(raw[pos:end], dtype="<f4").reshape(dims).copy()
            pos = end
            if name in entries:
                raise FormatError(f"{path}: duplicate entry name {name!r}")
            entries[name] = arr
    except struct.error as exc:
        raise FormatError(f"{path}: truncated SDNW file") from exc
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")

    arch = _ARCH_NAMES[arch_tag]
    if "head.bias" not in entries:
        raise FormatError(f"{path}: missing head.bias entry")
    channels = entries["head.bias"].shape[0]
    return WeightsBundle(arch, channels, entries)
