"""Flat ``key = value`` run configuration shared by every CLI command."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from lidm.codec import SensorConfig
from lidm.compression.config import CompressionConfig
from lidm.diffusion.schedule import DiffusionConfig
from lidm.errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    # sensor; height/width 0 keep the preset's size
    beams: int = 64
    height: int = 0
    width: int = 0
    # synthetic scenes; ranges are "low,high"
    depth_jitter: float = 0.0
    ground_height: str = "1.73"
    boxes: str = "2,6"
    cylinders: str = "0,4"
    walls: str = "0,2"
    distance: str = "4,30"
    # autoencoder
    f_c: int = 2
    f_p: int = 4
    latent_dim: int = 8
    codebook_size: int = 16384
    ae_base_channels: int = 32
    ae_num_res_blocks: int = 2
    lambda_coord: float = 0.1
    lambda_mask: float = 1.0
    gan_weight: float = 0.5
    gan_start_step: int = 1000
    gan_loss: str = "vanilla"
    beta_commit: float = 0.25
    reseed_every: int = 1000
    perceptual_weight: float = 0.0
    perceptual_taps: str = "final"
    ae_lr: float = 2e-4
    ae_batch_size: int = 8
    # diffusion
    timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    sampler: str = "ddim"
    ddim_steps: int = 50
    ddim_eta: float = 0.0
    condition_mode: str = "none"
    num_classes: int = 5
    token_dim: int = 0
    dm_base_channels: int = 64
    channel_mult: str = "1,2,4"
    dm_num_res_blocks: int = 2
    attention_heads: int = 4
    dm_lr: float = 1e-4
    dm_batch_size: int = 8
    # metrics
    partitions: int = 16
    agg: str = "depth"
    voxel_size: float = 0.25
    # misc
    seed: int = 0
    log_every: int = 100

    def sensor(self) -> SensorConfig:
        if self.beams not in (32, 64):
            raise ConfigError(f"beams must be 32 or 64, got {self.beams}")
        return SensorConfig.preset(self.beams).resized(self.height or None, self.width or None)

    def scene_params(self):
        from lidm.synth import SceneParams

        def pair(key, cast):
            raw = getattr(self, key)
            try:
                lo, hi = (cast(p) for p in raw.split(","))
            except ValueError as exc:
                raise ConfigError(f"{key} must look like 'low,high', got {raw!r}") from exc
            return lo, hi

        try:
            ground = None if self.ground_height.strip().lower() == "none" else float(self.ground_height)
            return SceneParams(boxes=pair("boxes", int), cylinders=pair("cylinders", int),
                               walls=pair("walls", int), distance=pair("distance", float),
                               ground_height=ground, depth_jitter=self.depth_jitter)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def compression(self) -> CompressionConfig:
        return CompressionConfig(
            f_c=self.f_c, f_p=self.f_p, latent_dim=self.latent_dim, codebook_size=self.codebook_size,
            base_channels=self.ae_base_channels, num_res_blocks=self.ae_num_res_blocks,
            lambda_coord=self.lambda_coord, lambda_mask=self.lambda_mask, gan_weight=self.gan_weight,
            gan_start_step=self.gan_start_step, gan_loss=self.gan_loss, beta_commit=self.beta_commit,
            reseed_every=self.reseed_every, perceptual_weight=self.perceptual_weight,
            perceptual_taps=self.perceptual_taps, lr=self.ae_lr, batch_size=self.ae_batch_size)

    def diffusion(self) -> DiffusionConfig:
        try:
            mult = tuple(int(m) for m in self.channel_mult.split(","))
        except ValueError as exc:
            raise ConfigError(f"channel_mult must be comma-separated integers, got {self.channel_mult!r}") from exc
        return DiffusionConfig(
            timesteps=self.timesteps, beta_start=self.beta_start, beta_end=self.beta_end, sampler=self.sampler,
            ddim_steps=self.ddim_steps, ddim_eta=self.ddim_eta, condition_mode=self.condition_mode,
            condition_channels=self.num_classes if self.condition_mode == "concat_image" else 0,
            token_dim=self.token_dim, base_channels=self.dm_base_channels, channel_mult=mult,
            num_res_blocks=self.dm_num_res_blocks, attention_heads=self.attention_heads, lr=self.dm_lr,
            batch_size=self.dm_batch_size)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def lines(self) -> list[str]:
        return [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _cast(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from exc
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, unknown keys are rejected."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _cast(key, value)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"), str(path))
