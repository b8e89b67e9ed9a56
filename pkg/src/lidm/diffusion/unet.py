"""Noise-prediction UNet over latent grids."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from lidm.diffusion.schedule import DiffusionConfig
from lidm.errors import ConfigError
from lidm.nn import CircularConv2d, ResBlock, Upsample, group_norm


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.double()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=1)
    return emb


class Attention(nn.Module):
    """Multi-head attention of spatial features over themselves or over context tokens."""

    def __init__(self, channels: int, heads: int, context_dim: int | None = None):
        super().__init__()
        if channels % heads:
            heads = 1
        self.heads = heads
        self.norm = group_norm(channels)
        self.q = nn.Linear(channels, channels)
        kv_in = context_dim or channels
        self.k = nn.Linear(kv_in, channels)
        self.v = nn.Linear(kv_in, channels)
        self.proj = nn.Linear(channels, channels)

    def forward(self, x, context=None):
        b, c, h, w = x.shape
        seq = self.norm(x).flatten(2).transpose(1, 2)
        src = seq if context is None else context
        split = lambda t: t.view(b, -1, self.heads, c // self.heads).transpose(1, 2)  # noqa: E731
        out = F.scaled_dot_product_attention(split(self.q(seq)), split(self.k(src)), split(self.v(src)))
        out = self.proj(out.transpose(1, 2).reshape(b, h * w, c))
        return x + out.transpose(1, 2).view(b, c, h, w)


class UNet(nn.Module):
    """UNet with sinusoidal timestep embedding and attention at the coarsest level.

    ``concat_image`` conditioning widens the input by ``condition_channels``;
    ``cross_attention_tokens`` adds a cross-attention layer that is skipped
    when the token sequence is missing or empty.
    """

    def __init__(self, latent_channels: int, cfg: DiffusionConfig):
        super().__init__()
        self.cfg = cfg
        self.latent_channels = latent_channels
        base = cfg.base_channels
        temb = 4 * base
        self.levels = len(cfg.channel_mult)
        self.time_mlp = nn.Sequential(nn.Linear(base, temb), nn.SiLU(), nn.Linear(temb, temb))
        in_ch = latent_channels + (cfg.condition_channels if cfg.condition_mode == "concat_image" else 0)
        self.conv_in = CircularConv2d(in_ch, base, 3)
        self.down = nn.ModuleList()
        skips = [base]
        ch = base
        for i, mult in enumerate(cfg.channel_mult):
            for _ in range(cfg.num_res_blocks):
                self.down.append(ResBlock(ch, base * mult, 3, temb))
                ch = base * mult
                skips.append(ch)
            if i < self.levels - 1:
                self.down.append(CircularConv2d(ch, ch, 4, stride=2))
                skips.append(ch)
        self.mid1 = ResBlock(ch, ch, 3, temb)
        self.self_attn = Attention(ch, cfg.attention_heads)
        self.cross_attn = (Attention(ch, cfg.attention_heads, cfg.token_dim)
                           if cfg.condition_mode == "cross_attention_tokens" else None)
        self.mid2 = ResBlock(ch, ch, 3, temb)
        self.up = nn.ModuleList()
        for i, mult in reversed(list(enumerate(cfg.channel_mult))):
            for _ in range(cfg.num_res_blocks + 1):
                self.up.append(ResBlock(ch + skips.pop(), base * mult, 3, temb))
                ch = base * mult
            if i > 0:
                self.up.append(Upsample(ch, (2, 2), 3))
        self.norm_out = group_norm(ch)
        self.conv_out = CircularConv2d(ch, latent_channels, 3)

    def check_latent(self, z):
        factor = 2 ** (self.levels - 1)
        if z.shape[1] != self.latent_channels or z.shape[2] % factor or z.shape[3] % factor:
            raise ConfigError(f"latent {tuple(z.shape[1:])} needs {self.latent_channels} channels and "
                              f"spatial sizes divisible by {factor}")

    def forward(self, z, t, ctx=None):
        self.check_latent(z)
        mode = self.cfg.condition_mode
        if mode == "concat_image":
            if ctx is None:
                ctx = z.new_zeros(z.shape[0], self.cfg.condition_channels, *z.shape[2:])
            if ctx.shape[0] != z.shape[0] or ctx.shape[1] != self.cfg.condition_channels or \
                    ctx.shape[2:] != z.shape[2:]:
                raise ConfigError(f"condition map {tuple(ctx.shape)} does not match latent {tuple(z.shape)}")
            z = torch.cat([z, ctx.to(z.dtype)], dim=1)
        elif mode == "cross_attention_tokens" and ctx is not None:
            if ctx.ndim != 3 or ctx.shape[-1] != self.cfg.token_dim:
                raise ConfigError(f"token context {tuple(ctx.shape)} must be B x L x {self.cfg.token_dim}")
        t = torch.as_tensor(t).reshape(-1).expand(z.shape[0])
        temb = self.time_mlp(timestep_embedding(t, self.cfg.base_channels).to(z.dtype))
        h = self.conv_in(z)
        hs = [h]
        for layer in self.down:
            h = layer(h, temb) if isinstance(layer, ResBlock) else layer(h)
            hs.append(h)
        h = self.mid1(h, temb)
        h = self.self_attn(h)
        if self.cross_attn is not None and ctx is not None and ctx.shape[1] > 0:
            h = self.cross_attn(h, ctx.to(h.dtype))
        h = self.mid2(h, temb)
        for layer in self.up:
            if isinstance(layer, ResBlock):
                h = layer(torch.cat([h, hs.pop()], dim=1), temb)
            else:
                h = layer(h)
        return self.conv_out(F.silu(self.norm_out(h)))
