"""Map and prior estimation networks.

The graphs mirror the inference engine on the deblurring side exactly:
same layer order, channel counts, padding (zeros, cross-correlation),
2x average pooling, nearest upsampling and [upsampled, skip] concat
order.  ``sdnw_entries`` emits parameters under the names and order the
SDNW signature prescribes, so exported weights load without remapping.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

MEN_FEATURES = 32
MEN_BLOCKS = 6
PEN_FEATURES = (8, 16, 32)


def _he_init(module, generator=None):
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu",
                                    generator=generator)
            nn.init.zeros_(m.bias)


class ResBlock(nn.Module):
    def __init__(self, features):
        super().__init__()
        self.conv1 = nn.Conv2d(features, features, 3, padding=1)
        self.conv2 = nn.Conv2d(features, features, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class MapEstimator(nn.Module):
    """Estimates the latent map from the stacked (image, image conv kernel)."""

    def __init__(self, channels: int, seed: int | None = None):
        super().__init__()
        self.channels = channels
        f = MEN_FEATURES
        self.stem = nn.Conv2d(2 * channels, f, 3, padding=1)
        self.blocks = nn.ModuleList(ResBlock(f) for _ in range(MEN_BLOCKS))
        self.head = nn.Conv2d(f, channels, 3, padding=1)
        if seed is not None:
            gen = torch.Generator().manual_seed(seed)
            _he_init(self, gen)

    def forward(self, x):
        h = self.stem(x)
        for block in self.blocks:
            h = block(h)
        return torch.sigmoid(self.head(h))

    def sdnw_entries(self):
        entries = [("stem.weight", self.stem.weight), ("stem.bias", self.stem.bias)]
        for i, block in enumerate(self.blocks):
            entries += [
                (f"block{i}.conv1.weight", block.conv1.weight),
                (f"block{i}.conv1.bias", block.conv1.bias),
                (f"block{i}.conv2.weight", block.conv2.weight),
                (f"block{i}.conv2.bias", block.conv2.bias),
            ]
        entries += [("head.weight", self.head.weight), ("head.bias", self.head.bias)]
        return [(n, p.detach().cpu().numpy()) for n, p in entries]


class _ConvPair(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)

    def forward(self, x):
        return F.relu(self.conv2(F.relu(self.conv1(x))))


class PriorEstimator(nn.Module):
    """Estimates the weighted prior derivative field from the current image."""

    def __init__(self, channels: int, seed: int | None = None):
        super().__init__()
        self.channels = channels
        f1, f2, f3 = PEN_FEATURES
        self.enc1 = _ConvPair(channels, f1)
        self.enc2 = _ConvPair(f1, f2)
        self.enc3 = _ConvPair(f2, f3)
        self.dec2 = _ConvPair(f3 + f2, f2)
        self.dec1 = _ConvPair(f2 + f1, f1)
        self.head = nn.Conv2d(f1, channels, 3, padding=1)
        if seed is not None:
            gen = torch.Generator().manual_seed(seed)
            _he_init(self, gen)

    def forward(self, x):
        h0, w0 = x.shape[2], x.shape[3]
        ph = (-h0) % 4
        pw = (-w0) % 4
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect")
        e1 = self.enc1(x)
        e2 = self.enc2(F.avg_pool2d(e1, 2))
        e3 = self.enc3(F.avg_pool2d(e2, 2))
        d2 = self.dec2(torch.cat([F.interpolate(e3, scale_factor=2, mode="nearest"), e2], dim=1))
        d1 = self.dec1(torch.cat([F.interpolate(d2, scale_factor=2, mode="nearest"), e1], dim=1))
        return self.head(d1)[:, :, :h0, :w0]

    def sdnw_entries(self):
        entries = []
        for name in ("enc1", "enc2", "enc3", "dec2", "dec1"):
            pair = getattr(self, name)
            entries += [
                (f"{name}.conv1.weight", pair.conv1.weight),
                (f"{name}.conv1.bias", pair.conv1.bias),
                (f"{name}.conv2.weight", pair.conv2.weight),
                (f"{name}.conv2.bias", pair.conv2.bias),
            ]
        entries += [("head.weight", self.head.weight), ("head.bias", self.head.bias)]
        return [(n, p.detach().cpu().numpy()) for n, p in entries]


def load_entries(net, entries) -> None:
    """Load SDNW (name, array) pairs back into a network."""
    expected = dict(net.sdnw_entries())
    if list(expected) != [n for n, _ in entries]:
        raise ValueError("entry names do not match the network signature")
    state = {}
    mapping = dict(entries)
    for name, param in _named_sdnw_params(net):
        state[name] = torch.from_numpy(mapping[name].copy())
    with torch.no_grad():
        for name, param in _named_sdnw_params(net):
            param.copy_(state[name])


def _named_sdnw_params(net):
    if isinstance(net, MapEstimator):
        yield "stem.weight", net.stem.weight
        yield "stem.bias", net.stem.bias
        for i, block in enumerate(net.blocks):
            yield f"block{i}.conv1.weight", block.conv1.weight
            yield f"block{i}.conv1.bias", block.conv1.bias
            yield f"block{i}.conv2.weight", block.conv2.weight
            yield f"block{i}.conv2.bias", block.conv2.bias
        yield "head.weight", net.head.weight
        yield "head.bias", net.head.bias
    else:
        for name in ("enc1", "enc2", "enc3", "dec2", "dec1"):
            pair = getattr(net, name)
            yield f"{name}.conv1.weight", pair.conv1.weight
            yield f"{name}.conv1.bias", pair.conv1.bias
            yield f"{name}.conv2.weight", pair.conv2.weight
            yield f"{name}.conv2.bias", pair.conv2.bias
        yield "head.weight", net.head.weight
        yield "head.bias", net.head.bias
