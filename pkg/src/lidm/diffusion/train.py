"""Latent diffusion training and sampling on top of a frozen autoencoder."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from lidm import checkpoint
from lidm.codec import RangeImage
from lidm.compression.train import AE_KIND, AETrainer, images_to_tensor
from lidm.diffusion.sampling import sample_ddim, sample_ddpm
from lidm.diffusion.schedule import DiffusionConfig, Schedule, make_schedule, q_sample
from lidm.diffusion.unet import UNet
from lidm.errors import CheckpointError, ConfigError, DataError, DivergenceError

logger = logging.getLogger(__name__)

DM_KIND = "diffusion"
MASK_THRESHOLD = 0.5


def training_loss(model, schedule: Schedule, z0, t, eps, ctx=None) -> torch.Tensor:
    """Mean squared error between the injected noise and the model's prediction."""
    return F.mse_loss(model(q_sample(z0, t, eps, schedule), torch.as_tensor(t), ctx), eps)


def frozen_autoencoder(ae_state: dict):
    """Autoencoder module (eval mode, no gradients) from a checkpoint payload."""
    if ae_state.get("kind") != AE_KIND:
        raise CheckpointError("diffusion training needs an autoencoder checkpoint")
    model = AETrainer.from_state(ae_state).model
    model.eval()
    model.requires_grad_(False)
    return model


@torch.no_grad()
def encode_latents(ae, images, chunk: int = 16) -> torch.Tensor:
    x = images_to_tensor(images)
    return torch.cat([ae.encode(x[i:i + chunk]) for i in range(0, len(x), chunk)])


def _stack_context(ctx, n: int):
    if ctx is None:
        return None
    ctx = torch.as_tensor(ctx) if not isinstance(ctx, torch.Tensor) else ctx
    if ctx.shape[0] != n:
        raise DataError(f"got {ctx.shape[0]} condition entries for {n} scenes")
    return ctx.float()


@dataclass
class DMTrainer:
    ae_state: dict
    cfg: DiffusionConfig
    seed: int = 0
    step: int = 0
    latent_std: float = 1.0
    history: dict = field(default_factory=lambda: {"loss": []})

    def __post_init__(self):
        self.ae = frozen_autoencoder(self.ae_state)
        h, w, c = self.ae.cfg.latent_shape(self.ae.sensor)
        self.latent_shape = (c, h, w)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            self.model = UNet(c, self.cfg)
        self.model.check_latent(torch.zeros((1,) + self.latent_shape))
        self.opt = torch.optim.Adam(self.model.parameters(), lr=self.cfg.lr)
        self.schedule = make_schedule(self.cfg)

    @property
    def sensor(self):
        return self.ae.sensor

    def prepare(self, images, ctx=None):
        """Standardized latents (and stacked condition inputs) for a training set."""
        if any(img.config != self.sensor for img in images):
            raise CheckpointError("training images do not match the autoencoder's sensor")
        z = encode_latents(self.ae, images)
        if self.step == 0 and not self.history["loss"]:
            self.latent_std = float(z.std()) or 1.0
        return z / self.latent_std, _stack_context(ctx, len(images))

    def train_step(self, z0_all, ctx_all=None) -> float:
        rng = np.random.default_rng([self.seed, self.step])
        gen = torch.Generator().manual_seed(int(rng.integers(2**62)))
        n, bs = len(z0_all), self.cfg.batch_size
        idx = np.sort(rng.permutation(n)[:bs] if n >= bs else rng.integers(n, size=bs))
        t = rng.integers(1, self.cfg.timesteps + 1, size=len(idx))
        z0 = z0_all[idx]
        eps = torch.randn(z0.shape, generator=gen)
        ctx = ctx_all[idx] if ctx_all is not None else None
        self.model.train()
        loss = training_loss(self.model, self.schedule, z0, t, eps, ctx)
        if not torch.isfinite(loss):
            raise DivergenceError(f"non-finite diffusion loss at step {self.step}")
        self.opt.zero_grad(set_to_none=True)
        loss.backward()
        self.opt.step()
        value = float(loss.detach())
        self.history["loss"].append(value)
        self.step += 1
        return value

    def run(self, z0_all, until: int, ctx_all=None, log_every: int = 0) -> None:
        while self.step < until:
            loss = self.train_step(z0_all, ctx_all)
            if log_every and self.step % log_every == 0:
                logger.info("step %d loss %.5f", self.step, loss)

    def state(self) -> dict:
        return {
            "kind": DM_KIND,
            "ae": self.ae_state,
            "config": self.cfg.to_dict(),
            "seed": self.seed,
            "step": self.step,
            "latent_std": self.latent_std,
            "model": self.model.state_dict(),
            "opt": self.opt.state_dict(),
            "history": {k: list(v) for k, v in self.history.items()},
        }

    def save(self, path) -> None:
        checkpoint.save(path, self.state())

    @classmethod
    def from_state(cls, payload: dict) -> "DMTrainer":
        try:
            trainer = cls(payload["ae"], DiffusionConfig.from_dict(payload["config"]), payload["seed"],
                          payload["step"], payload["latent_std"],
                          {k: list(v) for k, v in payload["history"].items()})
            trainer.model.load_state_dict(payload["model"])
            trainer.opt.load_state_dict(payload["opt"])
        except (KeyError, RuntimeError, TypeError) as exc:
            raise CheckpointError(f"diffusion checkpoint is inconsistent: {exc}") from exc
        return trainer

    @classmethod
    def load(cls, path) -> "DMTrainer":
        return cls.from_state(checkpoint.load(path, DM_KIND))

    def eps_model(self):
        self.model.eval()
        return lambda z, t, ctx: self.model(z, t, ctx)

    @torch.no_grad()
    def sample_latents(self, n: int, steps: int | None = None, eta: float | None = None, ctx=None,
                       seed: int = 0, sampler: str | None = None, chunk: int = 64) -> torch.Tensor:
        """Latents in autoencoder units (standardization undone)."""
        sampler = sampler or self.cfg.sampler
        steps = self.cfg.ddim_steps if steps is None else steps
        eta = self.cfg.ddim_eta if eta is None else eta
        if sampler not in ("ddim", "ddpm"):
            raise ConfigError(f"unknown sampler {sampler!r}")
        if ctx is not None:
            ctx = torch.as_tensor(ctx).float()
            if ctx.shape[0] not in (1, n):
                raise DataError(f"condition batch of {ctx.shape[0]} does not match {n} samples")
        out = []
        for start in range(0, n, chunk):
            m = min(chunk, n - start)
            c = None if ctx is None else _expand_ctx(ctx, start, m)
            if sampler == "ddim":
                z = sample_ddim(self.eps_model(), self.schedule, m, self.latent_shape, steps, eta, c, seed,
                                start=start)
            else:
                z = sample_ddpm(self.eps_model(), self.schedule, m, self.latent_shape, c, seed, start=start)
            out.append(z)
        if not out:
            return torch.zeros((0,) + self.latent_shape)
        return torch.cat(out) * self.latent_std

    @torch.no_grad()
    def decode(self, latents: torch.Tensor, threshold: float = MASK_THRESHOLD) -> list[RangeImage]:
        images = []
        for i in range(0, len(latents), 16):
            v_hat, m_hat = self.ae.decode(latents[i:i + 16])
            for v, m in zip(v_hat[:, 0].double().numpy(), (m_hat[:, 0] >= threshold).numpy()):
                images.append(RangeImage.from_values(v, m, self.sensor))
        return images

    def generate(self, n: int, **kwargs) -> list[RangeImage]:
        return self.decode(self.sample_latents(n, **kwargs))


def _expand_ctx(ctx, start: int, m: int):
    """A condition batch of one is shared by every sample; larger batches are sliced."""
    if ctx.shape[0] == 1:
        return ctx.expand(m, *ctx.shape[1:])
    return ctx[start:start + m]


def train_diffusion(ae_state: dict, images, cfg: DiffusionConfig, steps: int, seed: int = 0,
                    ctx=None) -> DMTrainer:
    trainer = DMTrainer(ae_state, cfg, seed)
    z0, c = trainer.prepare(images, ctx)
    trainer.run(z0, steps, c)
    return trainer
