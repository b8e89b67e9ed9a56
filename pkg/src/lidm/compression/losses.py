"""Autoencoder training objectives."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from lidm.codec import SensorConfig
from lidm.errors import ConfigError
from lidm.metrics.extractors import ToyRangeNet, select_taps

_LN2 = math.log(2.0)


def ray_grid(sensor: SensorConfig, dtype=torch.float32) -> torch.Tensor:
    """3 x H x W unit ray directions at pixel centers."""
    rows = (torch.arange(sensor.height, dtype=torch.float64) + 0.5) / sensor.height
    cols = (torch.arange(sensor.width, dtype=torch.float64) + 0.5) / sensor.width
    yaw = (2.0 * cols - 1.0) * math.pi
    pitch = (1.0 - rows) * sensor.fov_rad + sensor.fov_down_rad
    cp = torch.cos(pitch)[:, None]
    dirs = torch.stack([torch.cos(yaw)[None] * cp, -torch.sin(yaw)[None] * cp,
                        torch.sin(pitch)[:, None].expand(-1, sensor.width)])
    return dirs.to(dtype)


def coordinates(v: torch.Tensor, sensor: SensorConfig, rays: torch.Tensor | None = None) -> torch.Tensor:
    """Differentiable B x 3 x H x W point coordinates for B x 1 x H x W unit values."""
    if rays is None:
        rays = ray_grid(sensor, v.dtype)
    depth = torch.expm1(v * (sensor.omega * _LN2))
    return rays[None] * depth


def _check_shapes(*tensors):
    spatial = {tuple(t.shape[-2:]) for t in tensors}
    if len(spatial) != 1:
        raise ValueError(f"spatial shapes differ: {sorted(spatial)}")


def reconstruction_loss(x, x_hat, p, p_hat, m, m_hat, lambda_coord: float, lambda_mask: float,
                        terms: bool = False):
    """Mean L1 on values + masked mean squared coordinate error + mean squared mask error.

    The coordinate term averages over pixels where the ground-truth mask is 1
    (summed over the three axes). With ``terms=True`` a dict of the parts is
    returned alongside the total.
    """
    _check_shapes(x, x_hat, p, p_hat, m, m_hat)
    if x.shape != x_hat.shape or p.shape != p_hat.shape or m.shape != m_hat.shape:
        raise ValueError("prediction and target shapes differ")
    l1 = (x - x_hat).abs().mean()
    valid = m
    denom = valid.sum().clamp_min(1.0)
    coord = (((p - p_hat) ** 2).sum(1, keepdim=True) * valid).sum() / denom
    mask = ((m - m_hat) ** 2).mean()
    total = l1 + lambda_coord * coord + lambda_mask * mask
    if terms:
        return total, {"l1": l1, "coord": coord, "mask": mask}
    return total


def discriminator_input(x, p, m, max_range: float):
    return torch.cat([2.0 * x - 1.0, p / max_range, m], dim=1)


def adversarial_losses(disc, real, fake, max_range: float, kind: str = "vanilla"):
    """``(d_loss, g_loss)`` for ``real = (x, p, m)`` and ``fake = (x_hat, p_hat, m_hat)``.

    ``d_loss`` sees detached fakes. Vanilla form: softplus(-real) + softplus(fake)
    averaged over patch logits; the generator uses the non-saturating softplus(-fake).
    """
    real_in = discriminator_input(*real, max_range)
    fake_in = discriminator_input(*fake, max_range)
    logits_real = disc(real_in)
    logits_fake_d = disc(fake_in.detach())
    logits_fake_g = disc(fake_in)
    if kind == "vanilla":
        d_loss = F.softplus(-logits_real).mean() + F.softplus(logits_fake_d).mean()
        g_loss = F.softplus(-logits_fake_g).mean()
    elif kind == "hinge":
        d_loss = F.relu(1.0 - logits_real).mean() + F.relu(1.0 + logits_fake_d).mean()
        g_loss = -logits_fake_g.mean()
    else:
        raise ConfigError(f"unknown GAN loss {kind!r}")
    return d_loss, g_loss


def perceptual_loss(x, x_hat, extractor: ToyRangeNet, tap_mode: str = "final"):
    """Feature matching over the extractor taps chosen by ``tap_mode``.

    ``x`` and ``x_hat`` are B x 2 x H x W ``[v, m]`` stacks. Each tap contributes
    its per-pixel squared error summed over channels, divided by the channel
    count and averaged over batch and space.
    """
    taps_a = select_taps(*extractor.taps(x), tap_mode)
    taps_b = select_taps(*extractor.taps(x_hat), tap_mode)
    total = x.new_zeros(())
    for a, b in zip(taps_a, taps_b):
        total = total + ((a - b) ** 2).sum(1).mean() / a.shape[1]
    return total
