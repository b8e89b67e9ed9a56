"""Range-image <-> point-cloud conversion.

Depths are log-scaled into unit pixel values (``v = log2(d + 1) / omega``) and
pixels are addressed by normalized azimuth/elevation coordinates taken at pixel
centers, which makes ``point_to_pixel(pixel_to_point(...))`` an exact identity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from lidm import kernels
from lidm.errors import DegeneratePointError, DomainError, OutOfFovError

logger = logging.getLogger(__name__)

INVALID_DEPTH = -1.0
_LN2 = math.log(2.0)


def _f32(x: float) -> float:
    return float(np.float32(x))


@dataclass(frozen=True)
class SensorConfig:
    """Beam geometry of a spinning LiDAR.

    Angles are in degrees. Float fields are snapped to float32 precision on
    construction so a config survives the LRI1 header round trip unchanged.
    ``max_range`` is derived: a pixel value of 1.0 decodes exactly to it.
    """

    height: int
    width: int
    fov_up: float
    fov_down: float
    omega: float

    def __post_init__(self):
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "width", int(self.width))
        for name in ("fov_up", "fov_down", "omega"):
            object.__setattr__(self, name, _f32(getattr(self, name)))
        if self.height < 1 or self.width < 1:
            raise DomainError(f"image size must be positive, got {self.height}x{self.width}")
        if not self.fov_up > self.fov_down:
            raise DomainError(f"fov_up ({self.fov_up}) must exceed fov_down ({self.fov_down})")
        if not self.omega > 0:
            raise DomainError(f"omega must be positive, got {self.omega}")

    @classmethod
    def preset(cls, beams: int) -> "SensorConfig":
        if beams == 64:
            return cls(64, 1024, 3.0, -25.0, 5.84)
        if beams == 32:
            return cls(32, 1024, 10.0, -30.0, 5.53)
        raise DomainError(f"no preset for {beams} beams (use 32 or 64)")

    def resized(self, height: int | None = None, width: int | None = None) -> "SensorConfig":
        return SensorConfig(height or self.height, width or self.width,
                            self.fov_up, self.fov_down, self.omega)

    @property
    def max_range(self) -> float:
        return math.expm1(self.omega * _LN2)

    @property
    def max_range_f32(self) -> np.float32:
        return np.float32(self.max_range)

    @property
    def fov_up_rad(self) -> float:
        return math.radians(self.fov_up)

    @property
    def fov_down_rad(self) -> float:
        return math.radians(self.fov_down)

    @property
    def fov_rad(self) -> float:
        return self.fov_up_rad - self.fov_down_rad

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def decode_depth(v, cfg: SensorConfig):
    """Map unit pixel values to depth in meters: ``2**(omega*v) - 1``."""
    arr = np.asarray(v, dtype=np.float64)
    if np.any(~((arr >= 0.0) & (arr <= 1.0))):
        raise DomainError("pixel values must lie in [0, 1]")
    out = np.expm1(cfg.omega * _LN2 * arr)
    return float(out) if out.ndim == 0 else out


def _encode(d: np.ndarray, cfg: SensorConfig) -> np.ndarray:
    return np.minimum(np.log1p(d) / (_LN2 * cfg.omega), 1.0)


def encode_depth(d, cfg: SensorConfig):
    """Inverse of :func:`decode_depth`.

    Negative depths are rejected. Depths beyond ``max_range`` are clamped to
    1.0; a warning is logged when the excess exceeds float32 rounding.
    """
    arr = np.asarray(d, dtype=np.float64)
    if np.any(~(arr >= 0.0)):
        raise DomainError("depth must be non-negative and finite")
    over = int(np.count_nonzero(arr > cfg.max_range_f32))
    if over:
        logger.warning("clamped %d depth value(s) above max_range %.3f m", over, cfg.max_range)
    out = _encode(np.minimum(arr, cfg.max_range), cfg)
    return float(out) if out.ndim == 0 else out


def _check_unit(name: str, x: np.ndarray) -> None:
    if np.any(~((x >= 0.0) & (x <= 1.0))):
        raise DomainError(f"{name} must lie in [0, 1]")


def ray_directions(a, b, cfg: SensorConfig) -> np.ndarray:
    """Unit direction vectors for normalized pixel coordinates ``(a, b)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    yaw = (2.0 * a - 1.0) * math.pi
    pitch = (1.0 - b) * cfg.fov_rad + cfg.fov_down_rad
    cp = np.cos(pitch)
    return np.stack([np.cos(yaw) * cp, -np.sin(yaw) * cp, np.sin(pitch)], axis=-1)


def pixel_to_point(a, b, v, cfg: SensorConfig) -> np.ndarray:
    """3D point for normalized column ``a``, row ``b`` and pixel value ``v``.

    Broadcasts over array inputs; the result has a trailing axis of size 3.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_unit("a", a)
    _check_unit("b", b)
    depth = np.asarray(decode_depth(v, cfg))
    return ray_directions(a, b, cfg) * depth[..., None]


def pixel_centers(rows, cols, cfg: SensorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Normalized ``(a, b)`` coordinates of pixel centers."""
    a = (np.asarray(cols, dtype=np.float64) + 0.5) / cfg.width
    b = (np.asarray(rows, dtype=np.float64) + 0.5) / cfg.height
    return a, b


# status codes of _locate
_OK, _DEGENERATE, _OUT_OF_FOV = 0, 1, 2


def _locate(points: np.ndarray, cfg: SensorConfig):
    """Vectorized inverse mapping. Returns rows, cols, ranges and a status array."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    status = np.zeros(len(points), dtype=np.int8)
    degenerate = ~(r > 0.0)
    status[degenerate] = _DEGENERATE
    safe_r = np.where(degenerate, 1.0, r)
    pitch = np.arcsin(np.clip(z / safe_r, -1.0, 1.0))
    out_fov = (pitch < cfg.fov_down_rad) | (pitch > cfg.fov_up_rad)
    status[out_fov & ~degenerate] = _OUT_OF_FOV
    yaw = np.arctan2(-y, x)
    a = (yaw / math.pi + 1.0) * 0.5
    b = 1.0 - (pitch - cfg.fov_down_rad) / cfg.fov_rad
    cols = np.mod(np.floor(a * cfg.width).astype(np.int64), cfg.width)
    rows = np.clip(np.floor(b * cfg.height).astype(np.int64), 0, cfg.height - 1)
    return rows, cols, r, status


def point_to_pixel(p, cfg: SensorConfig) -> tuple[int, int, float]:
    """Row index, column index and pixel value of a single point."""
    pts = np.asarray(p, dtype=np.float64).reshape(1, 3)
    if not np.all(np.isfinite(pts)):
        raise DomainError("point coordinates must be finite")
    rows, cols, r, status = _locate(pts, cfg)
    if status[0] == _DEGENERATE:
        raise DegeneratePointError("point at the sensor origin has no direction")
    if status[0] == _OUT_OF_FOV:
        raise OutOfFovError(f"point {tuple(pts[0])} lies outside the vertical field of view")
    return int(rows[0]), int(cols[0]), float(encode_depth(r[0], cfg))



def points_to_pixels(points, cfg: SensorConfig):
    """Vectorized :func:`point_to_pixel` for an N x 3 array.

    Returns ``(rows, cols, v, ok)``. Points at the origin or outside the
    vertical field of view get ``ok == False`` and ``v == 0``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise DomainError("point coordinates must be finite")
    rows, cols, r, status = _locate(pts, cfg)
    ok = status == _OK
    v = np.zeros(len(pts))
    v[ok] = encode_depth(r[ok], cfg)
    return rows, cols, v, ok

@dataclass(eq=False)
class PointCloud:
    """Unordered point set. ``intensity`` is carried along but never used."""

    points: np.ndarray
    intensity: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise DomainError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(eq=False)
class RangeImage:
    """Depth grid in meters with ``-1.0`` marking invalid pixels."""

    depth: np.ndarray
    config: SensorConfig

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float32)
        if self.depth.shape != self.config.shape:
            raise DomainError(f"depth grid {self.depth.shape} does not match sensor {self.config.shape}")

    @classmethod
    def empty(cls, cfg: SensorConfig) -> "RangeImage":
        return cls(np.full(cfg.shape, INVALID_DEPTH, dtype=np.float32), cfg)

    @classmethod
    def from_values(cls, v: np.ndarray, mask: np.ndarray, cfg: SensorConfig) -> "RangeImage":
        """Build an image from unit pixel values and a validity mask."""
        v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
        depth = np.where(np.asarray(mask) > 0, decode_depth(v, cfg), INVALID_DEPTH)
        depth = np.minimum(depth.astype(np.float32), cfg.max_range_f32)
        return cls(depth, cfg)

    @property
    def mask(self) -> np.ndarray:
        return (self.depth >= 0).astype(np.uint8)

    @property
    def values(self) -> np.ndarray:
        """Unit pixel values, 0 at invalid pixels."""
        d = self.depth.astype(np.float64)
        valid = d >= 0
        return np.where(valid, _encode(np.where(valid, d, 0.0), self.config), 0.0)

    def validate(self) -> None:
        """Raise DomainError unless the depth/mask invariants hold."""
        d = self.depth
        valid = (d >= 0) & (d <= self.config.max_range_f32)
        sentinel = d == np.float32(INVALID_DEPTH)
        if not np.all(valid | sentinel):
            raise DomainError("depth grid holds values that are neither valid nor the -1 sentinel")

    def roll(self, shift: int) -> "RangeImage":
        return RangeImage(np.roll(self.depth, shift, axis=1), self.config)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RangeImage):
            return NotImplemented
        return self.config == other.config and np.array_equal(self.depth, other.depth)


def unproject(img: RangeImage) -> PointCloud:
    """One point per valid pixel, placed along the pixel-center ray."""
    rows, cols = np.nonzero(img.depth >= 0)
    a, b = pixel_centers(rows, cols, img.config)
    depth = img.depth[rows, cols].astype(np.float64)
    return PointCloud(ray_directions(a, b, img.config) * depth[:, None])


_NUDGES = np.array([(i, j, k) for i in (0, -1, 1) for j in (0, -1, 1) for k in (0, -1, 1)], dtype=np.int32)


def unproject_float32(img: RangeImage) -> tuple[np.ndarray, int]:
    """Float32 coordinates that re-project onto ``img`` bit-exactly.

    Plain rounding of the float64 points can move the float32 range by one ulp.
    Each such point is searched over one-ulp nudges of its three coordinates.
    Returns the N x 3 array and the number of points still inexact.
    """
    rows, cols = np.nonzero(img.depth >= 0)
    target = img.depth[rows, cols]
    base = unproject(img).points.astype(np.float32)
    out = base.copy()
    cfg = img.config

    def exact(cand, idx):
        r2, c2, rng, status = _locate(cand.astype(np.float64), cfg)
        return (status == _OK) & (r2 == rows[idx]) & (c2 == cols[idx]) & \
            (rng.astype(np.float32) == target[idx])

    todo = np.nonzero(~exact(base, np.arange(len(base))))[0]
    bits = base.view(np.int32)
    for nudge in _NUDGES[1:]:
        if len(todo) == 0:
            break
        # adjacent bit patterns are adjacent floats of the same sign
        cand = (bits[todo] + nudge).view(np.float32)
        ok = exact(cand, todo)
        out[todo[ok]] = cand[ok]
        todo = todo[~ok]
    return out, len(todo)


@dataclass
class ProjectionStats:
    dropped_out_of_fov: int = 0
    dropped_degenerate: int = 0
    clamped: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def dropped(self) -> int:
        return self.dropped_out_of_fov + self.dropped_degenerate


def project_with_stats(cloud: PointCloud, cfg: SensorConfig) -> tuple[RangeImage, ProjectionStats]:
    """Rasterize a cloud; the nearest point wins each pixel."""
    pts = cloud.points
    stats = ProjectionStats()
    if len(pts) == 0:
        return RangeImage.empty(cfg), stats
    rows, cols, r, status = _locate(pts, cfg)
    stats.dropped_degenerate = int(np.count_nonzero(status == _DEGENERATE))
    stats.dropped_out_of_fov = int(np.count_nonzero(status == _OUT_OF_FOV))
    keep = status == _OK
    rows, cols, r = rows[keep], cols[keep], r[keep]
    depth32 = r.astype(np.float32)
    over = depth32 > cfg.max_range_f32
    stats.clamped = int(np.count_nonzero(over))
    if stats.clamped:
        logger.warning("clamped %d point range(s) above max_range %.3f m", stats.clamped, cfg.max_range)
        depth32[over] = cfg.max_range_f32
    if stats.dropped:
        logger.debug("dropped %d out-of-fov and %d degenerate point(s)",
                     stats.dropped_out_of_fov, stats.dropped_degenerate)
    flat = rows * cfg.width + cols
    best = kernels.scatter_min(flat, depth32.astype(np.float64), cfg.height * cfg.width)
    depth = np.where(np.isfinite(best), best, INVALID_DEPTH).astype(np.float32)
    return RangeImage(depth.reshape(cfg.shape), cfg), stats


def project(cloud: PointCloud, cfg: SensorConfig) -> RangeImage:
    return project_with_stats(cloud, cfg)[0]


def coordinate_image(v: np.ndarray, cfg: SensorConfig) -> np.ndarray:
    """H x W x 3 point coordinates of every pixel for unit values ``v``."""
    rows, cols = np.indices(v.shape)
    a, b = pixel_centers(rows, cols, cfg)
    return ray_directions(a, b, cfg) * np.asarray(decode_depth(v, cfg))[..., None]
