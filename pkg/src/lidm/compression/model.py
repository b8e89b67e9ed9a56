"""Curve-wise + patch-wise autoencoder with a vector-quantized latent."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from lidm.codec import SensorConfig
from lidm.compression.config import CompressionConfig
from lidm.errors import ConfigError
from lidm.nn import CircularConv2d, ResBlock, Upsample, group_norm

CURVE_KERNEL = (1, 4)


def to_network_input(x: torch.Tensor) -> torch.Tensor:
    """``[v, m]`` with ``v`` in [0, 1] becomes ``[2v - 1, m]``."""
    return torch.cat([2.0 * x[:, :1] - 1.0, x[:, 1:2]], dim=1)


class Encoder(nn.Module):
    """``eta`` curve stages (1x4 kernels, width-only stride 2) then ``mu`` patch stages (4x4, stride 2)."""

    def __init__(self, cfg: CompressionConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels
        curve = cfg.eta > 0
        self.conv_in = CircularConv2d(2, ch, CURVE_KERNEL if curve else 3)
        blocks = []
        for _ in range(cfg.eta):
            blocks += [ResBlock(ch, ch, CURVE_KERNEL) for _ in range(cfg.num_res_blocks)]
            blocks.append(CircularConv2d(ch, ch, CURVE_KERNEL, stride=(1, 2)))
        for i in range(cfg.mu):
            out = 2 * cfg.base_channels
            blocks += [ResBlock(ch if j == 0 else out, out, 3) for j in range(cfg.num_res_blocks)]
            blocks.append(CircularConv2d(out, out, 4, stride=2))
            ch = out
        self.blocks = nn.ModuleList(blocks)
        self.mid = ResBlock(ch, ch, 3)
        self.norm_out = group_norm(ch)
        self.conv_out = nn.Conv2d(ch, cfg.latent_dim, 1)
        self.out_channels = ch

    def forward(self, x):
        h = self.conv_in(to_network_input(x))
        for block in self.blocks:
            h = block(h)
        h = self.mid(h)
        return self.conv_out(F.silu(self.norm_out(h)))


class Decoder(nn.Module):
    """Mirror of :class:`Encoder`; emits unit range values and mask probabilities."""

    def __init__(self, cfg: CompressionConfig):
        super().__init__()
        ch = 2 * cfg.base_channels if cfg.mu else cfg.base_channels
        self.conv_in = nn.Conv2d(cfg.latent_dim, ch, 1)
        self.mid = ResBlock(ch, ch, 3)
        blocks = []
        for _ in range(cfg.mu):
            blocks += [ResBlock(ch, ch, 3) for _ in range(cfg.num_res_blocks)]
            blocks.append(Upsample(ch, (2, 2), 3))
        if cfg.mu:
            blocks.append(nn.Conv2d(ch, cfg.base_channels, 1))
            ch = cfg.base_channels
        for _ in range(cfg.eta):
            blocks += [ResBlock(ch, ch, CURVE_KERNEL) for _ in range(cfg.num_res_blocks)]
            blocks.append(Upsample(ch, (1, 2), CURVE_KERNEL))
        self.blocks = nn.ModuleList(blocks)
        self.norm_out = group_norm(ch)
        self.conv_out = CircularConv2d(ch, 2, CURVE_KERNEL if cfg.eta else 3)

    def forward(self, z):
        h = self.mid(self.conv_in(z))
        for block in self.blocks:
            h = block(h)
        out = torch.sigmoid(self.conv_out(F.silu(self.norm_out(h))))
        return out[:, :1], out[:, 1:2]


class Quantizer(nn.Module):
    """Nearest-entry (L2) codebook lookup with straight-through gradients."""

    def __init__(self, size: int, dim: int, beta: float = 0.25, seed: int = 0):
        super().__init__()
        if size < 1:
            raise ConfigError("codebook must have at least one entry")
        g = torch.Generator().manual_seed(seed)
        self.embedding = nn.Parameter((torch.rand(size, dim, generator=g) * 2 - 1) / size)
        self.beta = beta
        self.register_buffer("usage", torch.zeros(size, dtype=torch.long))
        self.register_buffer("initialized", torch.zeros((), dtype=torch.bool))

    @property
    def size(self) -> int:
        return self.embedding.shape[0]

    def nearest(self, flat: torch.Tensor) -> torch.Tensor:
        e = self.embedding
        if e.shape[0] == 0:
            raise ConfigError("empty codebook")
        dist = (flat * flat).sum(1, keepdim=True) - 2.0 * flat @ e.t() + (e * e).sum(1)[None]
        return dist.argmin(1)

    def forward(self, z: torch.Tensor):
        """Return ``(z_q, indices, vq_loss)`` for a B x c x h x w latent."""
        if z.shape[1] != self.embedding.shape[1]:
            raise ConfigError(f"latent has {z.shape[1]} channels, codebook entries have {self.embedding.shape[1]}")
        b, c, h, w = z.shape
        flat = z.permute(0, 2, 3, 1).reshape(-1, c)
        idx = self.nearest(flat)
        zq = self.embedding[idx].view(b, h, w, c).permute(0, 3, 1, 2)
        loss = F.mse_loss(zq, z.detach()) + self.beta * F.mse_loss(z, zq.detach())
        if self.training:
            self.usage += torch.bincount(idx, minlength=self.size)
        return z + (zq - z).detach(), idx.view(b, h, w), loss

    @torch.no_grad()
    def init_from(self, z: torch.Tensor, generator: torch.Generator) -> None:
        """Data-dependent initialization: entries drawn from latent cells plus small noise."""
        flat = z.permute(0, 2, 3, 1).reshape(-1, z.shape[1])
        pick = torch.randint(len(flat), (self.size,), generator=generator)
        noise = torch.randn(self.embedding.shape, generator=generator) * (flat.std() * 0.01 + 1e-6)
        self.embedding.copy_(flat[pick] + noise)
        self.initialized.fill_(True)

    @torch.no_grad()
    def reseed_dead(self, z: torch.Tensor, generator: torch.Generator) -> int:
        """Replace entries unused since the last call by random latent cells; returns the count."""
        dead = torch.nonzero(self.usage == 0).flatten()
        if len(dead):
            flat = z.permute(0, 2, 3, 1).reshape(-1, z.shape[1])
            pick = torch.randint(len(flat), (len(dead),), generator=generator)
            self.embedding[dead] = flat[pick]
        self.usage.zero_()
        return int(len(dead))


class Autoencoder(nn.Module):
    def __init__(self, cfg: CompressionConfig, sensor: SensorConfig, seed: int = 0):
        super().__init__()
        cfg.check_sensor(sensor)
        self.cfg = cfg
        self.sensor = sensor
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.encoder = Encoder(cfg)
            self.decoder = Decoder(cfg)
        self.quantizer = Quantizer(cfg.codebook_size, cfg.latent_dim, cfg.beta_commit, seed)

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != 2 or tuple(x.shape[2:]) != self.sensor.shape:
            raise ConfigError(f"expected input B x 2 x {self.sensor.height} x {self.sensor.width}, "
                              f"got {tuple(x.shape)}")

    def encode(self, x):
        """Continuous (pre-quantization) latent of a B x 2 x H x W ``[v, m]`` batch."""
        self._check_input(x)
        return self.encoder(x)

    def quantize(self, z):
        return self.quantizer(z)

    def decode(self, z, quantize: bool = True):
        h, w, c = self.cfg.latent_shape(self.sensor)
        if tuple(z.shape[1:]) != (c, h, w):
            raise ConfigError(f"expected latent B x {c} x {h} x {w}, got {tuple(z.shape)}")
        if quantize:
            z = self.quantizer(z)[0]
        return self.decoder(z)

    def forward(self, x):
        z = self.encode(x)
        zq, idx, vq_loss = self.quantizer(z)
        v_hat, m_hat = self.decoder(zq)
        return v_hat, m_hat, vq_loss, idx


class CurveGAN(nn.Module):
    """Patch discriminator whose first stage is curve-wise.

    Input channels are ``[x, p / max_range, m]``; logits are produced at
    1/2 the rows and 1/8 the columns of the input.
    """

    stride = (2, 8)

    def __init__(self, in_channels: int = 5, base: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            CircularConv2d(in_channels, base, CURVE_KERNEL, stride=(1, 2)), nn.LeakyReLU(0.2),
            CircularConv2d(base, 2 * base, CURVE_KERNEL, stride=(1, 2)), nn.LeakyReLU(0.2),
            CircularConv2d(2 * base, 4 * base, 4, stride=2), group_norm(4 * base), nn.LeakyReLU(0.2),
            CircularConv2d(4 * base, 1, 3),
        )

    def forward(self, x):
        return self.net(x)
