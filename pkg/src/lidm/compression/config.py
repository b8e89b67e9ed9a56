from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from lidm.codec import SensorConfig
from lidm.errors import ConfigError


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class CompressionConfig:
    f_c: int = 2
    f_p: int = 4
    latent_dim: int = 8
    codebook_size: int = 16384
    base_channels: int = 32
    num_res_blocks: int = 2
    lambda_coord: float = 0.1
    lambda_mask: float = 1.0
    gan_weight: float = 0.5
    gan_start_step: int = 1000
    gan_loss: str = "vanilla"
    beta_commit: float = 0.25
    reseed_every: int = 1000
    perceptual_weight: float = 0.0
    perceptual_taps: str = "final"
    lr: float = 2e-4
    batch_size: int = 8

    def __post_init__(self):
        if not (_is_pow2(self.f_c) and _is_pow2(self.f_p)):
            raise ConfigError(f"f_c={self.f_c} and f_p={self.f_p} must be powers of two")
        if self.latent_dim < 1 or self.codebook_size < 1:
            raise ConfigError("latent_dim and codebook_size must be positive")
        if self.gan_loss not in ("vanilla", "hinge"):
            raise ConfigError(f"gan_loss must be 'vanilla' or 'hinge', got {self.gan_loss!r}")

    @property
    def eta(self) -> int:
        return self.f_c.bit_length() - 1

    @property
    def mu(self) -> int:
        return self.f_p.bit_length() - 1

    def latent_shape(self, sensor: SensorConfig) -> tuple[int, int, int]:
        """``(h, w, c)`` for a sensor, after checking divisibility."""
        self.check_sensor(sensor)
        return sensor.height // self.f_p, sensor.width // (self.f_c * self.f_p), self.latent_dim

    def check_sensor(self, sensor: SensorConfig) -> None:
        if sensor.width % (self.f_c * self.f_p) or sensor.height % self.f_p:
            raise ConfigError(
                f"sensor {sensor.height}x{sensor.width} is not divisible by f_p={self.f_p} "
                f"(rows) and f_c*f_p={self.f_c * self.f_p} (columns)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CompressionConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})
