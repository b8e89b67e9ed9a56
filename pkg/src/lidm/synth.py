"""Procedural LiDAR scenes rendered by raycasting primitives.

The sensor sits at the origin. Scenes hold an optional ground plane plus
oriented boxes, vertical cylinders and vertical wall rectangles. Rays follow
pixel-center directions, so rendered images survive
``project(unproject(img))`` bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lidm import kernels
from lidm.codec import INVALID_DEPTH, RangeImage, SensorConfig, pixel_centers, ray_directions
from lidm.errors import ConfigError

DEFAULT_GROUND_HEIGHT = 1.73


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float]
    extents: tuple[float, float, float]  # full length, width, height in meters
    yaw: float = 0.0


@dataclass(frozen=True)
class Cylinder:
    center: tuple[float, float, float]
    radius: float
    height: float


@dataclass(frozen=True)
class Wall:
    start: tuple[float, float]
    end: tuple[float, float]
    z_min: float
    z_max: float


@dataclass(frozen=True)
class SceneSpec:
    ground_height: float | None = DEFAULT_GROUND_HEIGHT
    boxes: tuple[Box, ...] = ()
    cylinders: tuple[Cylinder, ...] = ()
    walls: tuple[Wall, ...] = ()
    seed: int | None = None

    @property
    def primitive_count(self) -> int:
        return len(self.boxes) + len(self.cylinders) + len(self.walls)


@dataclass(frozen=True)
class SceneParams:
    """Ranges for :func:`make_random_scene`. Counts are inclusive."""

    boxes: tuple[int, int] = (2, 6)
    cylinders: tuple[int, int] = (0, 4)
    walls: tuple[int, int] = (0, 2)
    box_size: tuple[float, float] = (1.5, 5.0)
    box_height: tuple[float, float] = (1.2, 3.0)
    cylinder_radius: tuple[float, float] = (0.15, 0.6)
    cylinder_height: tuple[float, float] = (2.0, 6.0)
    wall_length: tuple[float, float] = (6.0, 20.0)
    wall_height: tuple[float, float] = (2.0, 5.0)
    distance: tuple[float, float] = (4.0, 30.0)
    ground_height: float | None = DEFAULT_GROUND_HEIGHT
    depth_jitter: float = 0.0

    def __post_init__(self):
        for name in ("boxes", "cylinders", "walls"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigError(f"invalid count range for {name}: {(lo, hi)}")
        for name in ("box_size", "box_height", "cylinder_radius", "cylinder_height",
                     "wall_length", "wall_height", "distance"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"invalid range for {name}: {(lo, hi)}")
        if self.depth_jitter < 0:
            raise ConfigError("depth_jitter must be non-negative")


def make_random_scene(seed: int, params: SceneParams = SceneParams()) -> SceneSpec:
    rng = np.random.default_rng(seed)
    ground = params.ground_height
    floor_z = -ground if ground is not None else -DEFAULT_GROUND_HEIGHT

    def polar():
        r = rng.uniform(*params.distance)
        phi = rng.uniform(-math.pi, math.pi)
        return r * math.cos(phi), r * math.sin(phi), phi

    boxes = []
    for _ in range(rng.integers(params.boxes[0], params.boxes[1] + 1)):
        x, y, _ = polar()
        lx, ly = rng.uniform(*params.box_size, size=2)
        lz = rng.uniform(*params.box_height)
        boxes.append(Box((x, y, floor_z + 0.5 * lz), (lx, ly, lz), float(rng.uniform(-math.pi, math.pi))))
    cylinders = []
    for _ in range(rng.integers(params.cylinders[0], params.cylinders[1] + 1)):
        x, y, _ = polar()
        h = rng.uniform(*params.cylinder_height)
        cylinders.append(Cylinder((x, y, floor_z + 0.5 * h), float(rng.uniform(*params.cylinder_radius)), h))
    walls = []
    for _ in range(rng.integers(params.walls[0], params.walls[1] + 1)):
        x, y, phi = polar()
        half = 0.5 * rng.uniform(*params.wall_length)
        # tangential orientation keeps the wall clear of the sensor
        tx, ty = -math.sin(phi), math.cos(phi)
        walls.append(Wall((x - half * tx, y - half * ty), (x + half * tx, y + half * ty),
                          floor_z, floor_z + rng.uniform(*params.wall_height)))
    return SceneSpec(ground, tuple(boxes), tuple(cylinders), tuple(walls), seed)


def _pack(scene: SceneSpec):
    boxes = np.array([[*b.center, *b.extents, b.yaw] for b in scene.boxes], dtype=np.float64).reshape(-1, 7)
    cyl = np.array([[*c.center, c.radius, c.height] for c in scene.cylinders],
                   dtype=np.float64).reshape(-1, 5)
    walls = np.array([[*w.start, *w.end, w.z_min, w.z_max] for w in scene.walls],
                     dtype=np.float64).reshape(-1, 6)
    ground_z = -scene.ground_height if scene.ground_height is not None else math.nan
    return ground_z, boxes, cyl, walls


def raycast_labels(scene: SceneSpec, cfg: SensorConfig, jitter: float = 0.0,
                   rng: np.random.Generator | None = None) -> tuple[RangeImage, np.ndarray]:
    """Render ``scene`` and return the image plus a per-pixel primitive label map.

    Labels: 0 none, 1 ground, 2 box, 3 cylinder, 4 wall. ``jitter`` adds
    Gaussian depth noise (meters) to valid pixels; off by default.
    """
    rows, cols = np.indices(cfg.shape)
    a, b = pixel_centers(rows.ravel(), cols.ravel(), cfg)
    dirs = ray_directions(a, b, cfg)
    t, label = kernels.raycast(dirs, *_pack(scene), cfg.max_range)
    hit = np.isfinite(t)
    if jitter > 0:
        rng = rng if rng is not None else np.random.default_rng(scene.seed)
        t = np.where(hit, np.clip(t + rng.normal(0.0, jitter, t.shape), 1e-3, cfg.max_range), t)
    depth = np.where(hit, t, INVALID_DEPTH).astype(np.float32)
    depth = np.minimum(depth, cfg.max_range_f32)
    return RangeImage(depth.reshape(cfg.shape), cfg), label.reshape(cfg.shape)


def raycast(scene: SceneSpec, cfg: SensorConfig) -> RangeImage:
    return raycast_labels(scene, cfg)[0]


@dataclass
class SynthBatch:
    images: list[RangeImage] = field(default_factory=list)
    labels: list[np.ndarray] = field(default_factory=list)
    scenes: list[SceneSpec] = field(default_factory=list)


def scene_seed(seed: int, index: int) -> int:
    """Independent per-scene seed derived from a base seed and scene index."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint32)[0])


def synthesize(count: int, cfg: SensorConfig, seed: int = 0,
               params: SceneParams = SceneParams()) -> SynthBatch:
    out = SynthBatch()
    for i in range(count):
        s = scene_seed(seed, i)
        scene = make_random_scene(s, params)
        img, lab = raycast_labels(scene, cfg, params.depth_jitter)
        out.images.append(img)
        out.labels.append(lab)
        out.scenes.append(scene)
    return out
