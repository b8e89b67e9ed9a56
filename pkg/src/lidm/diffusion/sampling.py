"""DDPM and DDIM samplers.

Both accept any callable ``eps_model(z_t, t, ctx) -> eps_hat`` so they can be
driven by a trained UNet or by an analytic denoiser. Sample ``i`` draws all of
its noise from its own generator seeded with ``(seed, i)``, which makes every
sample independent of ``n`` and of batching.
"""

from __future__ import annotations

import numpy as np
import torch

from lidm.diffusion.schedule import Schedule
from lidm.errors import ConfigError


def sample_generators(seed: int, n: int, start: int = 0) -> list[torch.Generator]:
    out = []
    for i in range(start, start + n):
        s = np.random.SeedSequence([seed, i]).generate_state(2, dtype=np.uint64)
        out.append(torch.Generator().manual_seed(int(s[0] >> np.uint64(1))))
    return out


def _noise(gens, shape, dtype) -> torch.Tensor:
    return torch.stack([torch.randn(shape, generator=g, dtype=dtype) for g in gens])


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Descending timesteps from ``T`` to 1 (``steps`` of them, evenly spaced)."""
    if not 1 <= steps <= T:
        raise ConfigError(f"steps must lie in [1, {T}]")
    ts = np.unique(np.round(np.linspace(1, T, steps)).astype(np.int64))
    return [int(t) for t in ts[::-1]]


@torch.no_grad()
def sample_ddim(eps_model, schedule: Schedule, n: int, shape, steps: int = 50, eta: float = 0.0,
                ctx=None, seed: int = 0, dtype=torch.float32, start: int = 0) -> torch.Tensor:
    """Return ``n`` latents of ``shape`` (C x h x w) as an n x C x h x w tensor.

    ``start`` offsets the sample indices, so chunked calls reproduce one large call.
    """
    shape = tuple(shape)
    if n == 0:
        return torch.zeros((0,) + shape, dtype=dtype)
    gens = sample_generators(seed, n, start)
    ab = schedule.alpha_bars
    z = _noise(gens, shape, dtype)
    ts = ddim_timesteps(schedule.T, steps)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        eps = eps_model(z, torch.full((n,), t, dtype=torch.long), ctx)
        a_t, a_prev = ab[t], ab[t_prev]
        x0 = (z - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
        sigma = eta * np.sqrt((1.0 - a_prev) / (1.0 - a_t)) * np.sqrt(1.0 - a_t / a_prev)
        direction = np.sqrt(max(1.0 - a_prev - sigma**2, 0.0)) * eps
        z = np.sqrt(a_prev) * x0 + direction
        if sigma > 0:
            z = z + sigma * _noise(gens, shape, dtype)
    return z


@torch.no_grad()
def sample_ddpm(eps_model, schedule: Schedule, n: int, shape, ctx=None, seed: int = 0,
                dtype=torch.float32, start: int = 0) -> torch.Tensor:
    """Ancestral sampling over all ``T`` steps with posterior variance ``beta_tilde``."""
    shape = tuple(shape)
    if n == 0:
        return torch.zeros((0,) + shape, dtype=dtype)
    gens = sample_generators(seed, n, start)
    b, a, ab = schedule.betas, schedule.alphas, schedule.alpha_bars
    z = _noise(gens, shape, dtype)
    for t in range(schedule.T, 0, -1):
        eps = eps_model(z, torch.full((n,), t, dtype=torch.long), ctx)
        mean = (z - b[t] / np.sqrt(1.0 - ab[t]) * eps) / np.sqrt(a[t])
        var = b[t] * (1.0 - ab[t - 1]) / (1.0 - ab[t])
        z = mean + np.sqrt(var) * _noise(gens, shape, dtype) if t > 1 else mean
    return z
