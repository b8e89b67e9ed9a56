from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from lidm.errors import ConfigError

CONDITION_MODES = ("none", "concat_image", "cross_attention_tokens")


@dataclass(frozen=True)
class DiffusionConfig:
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    sampler: str = "ddim"
    ddim_steps: int = 50
    ddim_eta: float = 0.0
    condition_mode: str = "none"
    condition_channels: int = 0
    token_dim: int = 0
    base_channels: int = 64
    channel_mult: tuple = (1, 2, 4)
    num_res_blocks: int = 2
    attention_heads: int = 4
    lr: float = 1e-4
    batch_size: int = 8

    def __post_init__(self):
        if not 0.0 < self.beta_start < self.beta_end < 1.0:
            raise ConfigError("need 0 < beta_start < beta_end < 1")
        if self.timesteps < 1:
            raise ConfigError("timesteps must be positive")
        if not 1 <= self.ddim_steps <= self.timesteps:
            raise ConfigError(f"ddim_steps must lie in [1, {self.timesteps}]")
        if self.sampler not in ("ddpm", "ddim"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.condition_mode not in CONDITION_MODES:
            raise ConfigError(f"unknown condition mode {self.condition_mode!r}")
        if self.condition_mode == "concat_image" and self.condition_channels < 1:
            raise ConfigError("concat_image conditioning needs condition_channels >= 1")
        if self.condition_mode == "cross_attention_tokens" and self.token_dim < 1:
            raise ConfigError("token conditioning needs token_dim >= 1")
        object.__setattr__(self, "channel_mult", tuple(int(m) for m in self.channel_mult))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mult"] = list(self.channel_mult)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: (tuple(v) if k == "channel_mult" else v) for k, v in d.items() if k in names})


@dataclass(frozen=True)
class Schedule:
    """Arrays indexed by timestep ``t = 0..T``; entry 0 is the clean state (``alpha_bar = 1``)."""

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    def sqrt_ab(self, t) -> torch.Tensor:
        return torch.as_tensor(np.sqrt(self.alpha_bars[np.asarray(t)]))

    def sqrt_1m_ab(self, t) -> torch.Tensor:
        return torch.as_tensor(np.sqrt(1.0 - self.alpha_bars[np.asarray(t)]))


def make_schedule(cfg: DiffusionConfig) -> Schedule:
    """Linear beta schedule in float64."""
    betas = np.concatenate([[0.0], np.linspace(cfg.beta_start, cfg.beta_end, cfg.timesteps)])
    alphas = 1.0 - betas
    return Schedule(betas, alphas, np.cumprod(alphas))


def q_sample(z0: torch.Tensor, t, eps: torch.Tensor, schedule: Schedule) -> torch.Tensor:
    """``sqrt(ab_t) z0 + sqrt(1 - ab_t) eps``; ``t`` is a scalar or one step per batch item."""
    if eps.shape != z0.shape:
        raise ConfigError(f"noise shape {tuple(eps.shape)} differs from latent shape {tuple(z0.shape)}")
    t = np.asarray(t)
    if np.any((t < 1) | (t > schedule.T)):
        raise ConfigError(f"timesteps must lie in [1, {schedule.T}]")
    a = schedule.sqrt_ab(t).to(z0.dtype)
    b = schedule.sqrt_1m_ab(t).to(z0.dtype)
    if t.ndim:
        shape = (-1,) + (1,) * (z0.ndim - 1)
        a, b = a.view(shape), b.view(shape)
    return a * z0 + b * eps
