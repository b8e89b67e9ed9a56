"""Deterministic autoencoder training loop with resumable checkpoints."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from lidm import checkpoint
from lidm.codec import RangeImage, SensorConfig
from lidm.compression.config import CompressionConfig
from lidm.compression.losses import adversarial_losses, coordinates, perceptual_loss, ray_grid, \
    reconstruction_loss
from lidm.compression.model import Autoencoder, CurveGAN
from lidm.errors import CheckpointError, DataError, DivergenceError
from lidm.metrics.extractors import ToyRangeNet

logger = logging.getLogger(__name__)

AE_KIND = "autoencoder"
LOSS_KEYS = ("total", "rec", "l1", "coord", "mask", "vq", "perceptual", "g", "d")


def images_to_tensor(images) -> torch.Tensor:
    """N x 2 x H x W float32 stack of ``[v, mask]``."""
    if not images:
        raise DataError("no training images")
    arr = np.stack([np.stack([img.values, img.mask.astype(np.float64)]) for img in images])
    return torch.from_numpy(arr.astype(np.float32))


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


def _torch_gen(rng: np.random.Generator) -> torch.Generator:
    return torch.Generator().manual_seed(int(rng.integers(2**62)))


@dataclass
class AETrainer:
    cfg: CompressionConfig
    sensor: SensorConfig
    seed: int = 0
    step: int = 0
    history: dict = field(default_factory=lambda: {k: [] for k in LOSS_KEYS})

    def __post_init__(self):
        self.model = Autoencoder(self.cfg, self.sensor, seed=self.seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed + 1)
            self.disc = CurveGAN()
        self.opt = torch.optim.Adam(self.model.parameters(), lr=self.cfg.lr, betas=(0.5, 0.9))
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=self.cfg.lr, betas=(0.5, 0.9))
        self.rays = ray_grid(self.sensor)
        self.percept = ToyRangeNet(seed=self.seed) if self.cfg.perceptual_weight > 0 else None

    def _batch(self, data: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
        n = len(data)
        bs = self.cfg.batch_size
        idx = rng.permutation(n)[:bs] if n >= bs else rng.integers(n, size=bs)
        return data[np.sort(idx)]

    def train_step(self, data: torch.Tensor) -> dict:
        cfg = self.cfg
        rng = step_rng(self.seed, self.step)
        gen = _torch_gen(rng)
        x = self._batch(data, rng)
        v, m = x[:, :1], x[:, 1:2]
        self.model.train()
        quant = self.model.quantizer
        z = self.model.encode(x)
        if not bool(quant.initialized):
            quant.init_from(z.detach(), gen)
        zq, _, vq = quant(z)
        v_hat, m_hat = self.model.decoder(zq)
        p = coordinates(v, self.sensor, self.rays)
        p_hat = coordinates(v_hat, self.sensor, self.rays)
        rec, parts = reconstruction_loss(v, v_hat, p, p_hat, m, m_hat, cfg.lambda_coord, cfg.lambda_mask,
                                         terms=True)
        total = rec + vq
        perc = torch.zeros(())
        if self.percept is not None:
            perc = perceptual_loss(x, torch.cat([v_hat, m_hat], 1), self.percept, cfg.perceptual_taps)
            total = total + cfg.perceptual_weight * perc
        g_loss = d_loss = torch.zeros(())
        use_gan = cfg.gan_weight > 0 and self.step >= cfg.gan_start_step
        if use_gan:
            d_loss, g_loss = adversarial_losses(self.disc, (v, p, m), (v_hat, p_hat, m_hat),
                                                self.sensor.max_range, cfg.gan_loss)
            total = total + cfg.gan_weight * g_loss
        if not torch.isfinite(total):
            raise DivergenceError(
                f"non-finite loss at step {self.step}: rec={rec.item()} vq={vq.item()} "
                f"g={g_loss.item()} d={d_loss.item()}")
        self.opt.zero_grad(set_to_none=True)
        total.backward()
        self.opt.step()
        if use_gan:
            self.opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            self.opt_d.step()
        if cfg.reseed_every and (self.step + 1) % cfg.reseed_every == 0:
            n_dead = quant.reseed_dead(z.detach(), gen)
            logger.debug("step %d: reseeded %d dead codebook entries", self.step, n_dead)
        record = {"total": total, "rec": rec, "vq": vq, "perceptual": perc, "g": g_loss, "d": d_loss, **parts}
        record = {k: float(record[k].detach()) for k in LOSS_KEYS}
        for k in LOSS_KEYS:
            self.history[k].append(record[k])
        self.step += 1
        return record

    def run(self, data: torch.Tensor, until: int, log_every: int = 0) -> None:
        while self.step < until:
            rec = self.train_step(data)
            if log_every and self.step % log_every == 0:
                logger.info("step %d total %.5f rec %.5f vq %.5f", self.step, rec["total"], rec["rec"], rec["vq"])

    def state(self) -> dict:
        return {
            "kind": AE_KIND,
            "sensor": checkpoint.sensor_to_dict(self.sensor),
            "config": self.cfg.to_dict(),
            "seed": self.seed,
            "step": self.step,
            "model": self.model.state_dict(),
            "disc": self.disc.state_dict(),
            "opt": self.opt.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "history": {k: list(v) for k, v in self.history.items()},
        }

    def save(self, path) -> None:
        checkpoint.save(path, self.state())

    @classmethod
    def from_state(cls, payload: dict) -> "AETrainer":
        try:
            trainer = cls(CompressionConfig.from_dict(payload["config"]),
                          checkpoint.sensor_from_dict(payload["sensor"]), payload["seed"], payload["step"],
                          {k: list(v) for k, v in payload["history"].items()})
            trainer.model.load_state_dict(payload["model"])
            trainer.disc.load_state_dict(payload["disc"])
            trainer.opt.load_state_dict(payload["opt"])
            trainer.opt_d.load_state_dict(payload["opt_d"])
        except (KeyError, RuntimeError, TypeError) as exc:
            raise CheckpointError(f"autoencoder checkpoint is inconsistent: {exc}") from exc
        return trainer

    @classmethod
    def load(cls, path) -> "AETrainer":
        return cls.from_state(checkpoint.load(path, AE_KIND))


def train_autoencoder(images, cfg: CompressionConfig, steps: int, seed: int = 0,
                      sensor: SensorConfig | None = None) -> AETrainer:
    """Train from scratch for ``steps`` steps; the trainer holds the model and loss curves."""
    sensor = sensor or images[0].config
    if any(img.config != sensor for img in images):
        raise DataError("training images use different sensor configurations")
    trainer = AETrainer(cfg, sensor, seed)
    trainer.run(images_to_tensor(images), steps)
    return trainer


@torch.no_grad()
def reconstruct(model: Autoencoder, images, threshold: float = 0.5) -> list[RangeImage]:
    """Round-trip images through the autoencoder, thresholding the predicted mask."""
    model.eval()
    x = images_to_tensor(images)
    v_hat, m_hat = model.decode(model.encode(x))
    out = []
    for i, img in enumerate(images):
        out.append(RangeImage.from_values(v_hat[i, 0].double().numpy(),
                                          (m_hat[i, 0] >= threshold).numpy(), img.config))
    return out


@torch.no_grad()
def reconstruction_error(model: Autoencoder, images, threshold: float = 0.5) -> float:
    """Mean per-pixel ``|v - v_hat * [m_hat >= threshold]|``."""
    model.eval()
    x = images_to_tensor(images)
    v_hat, m_hat = model.decode(model.encode(x))
    composed = v_hat * (m_hat >= threshold)
    return float((composed - x[:, :1]).abs().mean())


def epoch_means(values, epoch: int) -> list[float]:
    n = len(values) // epoch
    return [math.fsum(values[i * epoch:(i + 1) * epoch]) / epoch for i in range(n)]
