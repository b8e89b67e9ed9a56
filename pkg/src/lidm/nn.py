"""Convolution building blocks with circular azimuth padding.

Range images wrap around horizontally, so every convolution pads the width
axis circularly and the height axis with zeros. With strides that divide the
input width, these layers commute with horizontal rolls by multiples of the
cumulative stride.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


def _split(total: int) -> tuple[int, int]:
    return total // 2, total - total // 2


class CircularConv2d(nn.Conv2d):
    """Conv2d whose width axis is padded circularly and height axis with zeros.

    ``padding`` is derived from the kernel: ``k - stride`` total per axis
    (``k - 1`` for stride 1), so output sizes are exact multiples.
    """

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, bias=True):
        kh, kw = (kernel_size, kernel_size) if isinstance(kernel_size, int) else kernel_size
        sh, sw = (stride, stride) if isinstance(stride, int) else stride
        super().__init__(in_channels, out_channels, (kh, kw), stride=(sh, sw), padding=0, bias=bias)
        self._pad_w = _split(max(kw - sw, 0))
        self._pad_h = _split(max(kh - sh, 0))

    def forward(self, x):
        if any(self._pad_w):
            x = F.pad(x, (*self._pad_w, 0, 0), mode="circular")
        if any(self._pad_h):
            x = F.pad(x, (0, 0, *self._pad_h))
        return F.conv2d(x, self.weight, self.bias, self.stride)


def group_norm(channels: int) -> nn.GroupNorm:
    groups = 8 if channels % 8 == 0 else (4 if channels % 4 == 0 else 1)
    return nn.GroupNorm(groups, channels, eps=1e-6)


class ResBlock(nn.Module):
    """Pre-activation residual block; ``kernel`` is (1, 4) in curve stages, 3 otherwise."""

    def __init__(self, in_channels, out_channels, kernel=3, temb_channels=0, dropout=0.0):
        super().__init__()
        self.norm1 = group_norm(in_channels)
        self.conv1 = CircularConv2d(in_channels, out_channels, kernel)
        self.temb_proj = nn.Linear(temb_channels, out_channels) if temb_channels else None
        self.norm2 = group_norm(out_channels)
        self.dropout = nn.Dropout(dropout)
        self.conv2 = CircularConv2d(out_channels, out_channels, kernel)
        self.skip = nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x, temb=None):
        h = self.conv1(F.silu(self.norm1(x)))
        if self.temb_proj is not None and temb is not None:
            h = h + self.temb_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(self.dropout(F.silu(self.norm2(h))))
        return self.skip(x) + h


class Upsample(nn.Module):
    """Nearest-neighbour upsampling by ``factor`` (h, w) followed by a convolution."""

    def __init__(self, channels, factor, kernel):
        super().__init__()
        self.factor = factor
        self.conv = CircularConv2d(channels, channels, kernel)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=self.factor, mode="nearest"))


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def seeded_generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed))
    return g
