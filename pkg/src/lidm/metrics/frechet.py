"""Fréchet distance between Gaussian fits of partition-aggregated scene features."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lidm import io
from lidm.errors import ConfigError, DataError, LidmError

logger = logging.getLogger(__name__)

DEFAULT_PARTITIONS = 16
MODES = ("depth", "angle")


@dataclass
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def save(self, path) -> None:
        io.write_stats(path, self.mu, self.sigma, self.n)

    @classmethod
    def load(cls, path) -> "FeatureStats":
        return cls(*io.read_stats(path))


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ConfigError(f"unknown aggregation mode {mode!r}; expected one of {MODES}")


def partition_aggregate(activation_map, mask, partitions: int = DEFAULT_PARTITIONS,
                        mode: str = "depth") -> np.ndarray:
    """Average valid-pixel activations within each of ``partitions`` bands.

    ``activation_map`` is H x W x C. Depth mode splits rows into bands
    (top to bottom), angle mode splits columns (left to right). The band
    means are concatenated into a ``partitions * C`` vector; a band without
    valid pixels contributes zeros.
    """
    _check_mode(mode)
    act = np.asarray(activation_map, dtype=np.float64)
    valid = np.asarray(mask) > 0
    h, w, c = act.shape
    axis_len = h if mode == "depth" else w
    if partitions < 1 or axis_len % partitions:
        raise ConfigError(f"{mode} aggregation needs {'H' if mode == 'depth' else 'W'}={axis_len} "
                          f"divisible by P={partitions}")
    step = axis_len // partitions
    out = np.zeros((partitions, c))
    empty = 0
    for i in range(partitions):
        sl = slice(i * step, (i + 1) * step)
        a = act[sl] if mode == "depth" else act[:, sl]
        m = valid[sl] if mode == "depth" else valid[:, sl]
        count = np.count_nonzero(m)
        if count == 0:
            empty += 1
            continue
        out[i] = a[m].sum(axis=0) / count
    if empty:
        logger.warning("%d of %d partitions had no valid pixels; using zero features", empty, partitions)
    return out.reshape(-1)


def partition_aggregate_points(features, xyz, max_range: float, partitions: int = DEFAULT_PARTITIONS,
                               mode: str = "depth") -> np.ndarray:
    """Volume counterpart of :func:`partition_aggregate`.

    Depth mode bins by horizontal distance into equal-width rings up to
    ``max_range``; angle mode bins by yaw into equal sectors starting at -pi.
    """
    _check_mode(mode)
    feats = np.asarray(features, dtype=np.float64)
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    c = feats.shape[1]
    if mode == "depth":
        key = np.hypot(xyz[:, 0], xyz[:, 1]) / max_range
    else:
        key = (np.arctan2(-xyz[:, 1], xyz[:, 0]) / np.pi + 1.0) * 0.5
    part = np.clip(np.floor(key * partitions).astype(np.int64), 0, partitions - 1)
    sums = np.zeros((partitions, c))
    np.add.at(sums, part, feats)
    counts = np.bincount(part, minlength=partitions).astype(np.float64)
    if np.any(counts == 0):
        logger.warning("%d of %d partitions were empty; using zero features",
                       int(np.sum(counts == 0)), partitions)
    out = np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0)
    return out.reshape(-1)


def gaussian_stats(vectors) -> FeatureStats:
    """Sample mean and unbiased covariance of row vectors."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("at least two feature vectors are needed for a covariance")
    mu = x.mean(axis=0)
    centered = x - mu
    sigma = centered.T @ centered / (x.shape[0] - 1)
    return FeatureStats(mu, 0.5 * (sigma + sigma.T), x.shape[0])


def _psd_sqrt(mat: np.ndarray) -> tuple[np.ndarray, float]:
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    clamped = float(-w[w < 0].sum())
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T, clamped


def frechet_report(a: FeatureStats, b: FeatureStats) -> tuple[float, float]:
    """Return the squared Fréchet distance and the magnitude of clamped eigenvalues.

    The cross term ``Tr((Sa Sb)^(1/2))`` is evaluated as the trace of the
    square root of the symmetric product ``Sa^(1/2) Sb Sa^(1/2)``.
    """
    if a.dim != b.dim:
        raise DataError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    diff = a.mu - b.mu
    root_a, clamp_a = _psd_sqrt(a.sigma)
    inner = root_a @ b.sigma @ root_a
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    clamp = clamp_a + float(-w[w < 0].sum())
    cross = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    d2 = float(diff @ diff) + float(np.trace(a.sigma)) + float(np.trace(b.sigma)) - 2.0 * cross
    return max(d2, 0.0), clamp


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    d2, clamp = frechet_report(a, b)
    if clamp > 1e-8 * max(1.0, float(np.trace(a.sigma) + np.trace(b.sigma))):
        logger.warning("clamped negative eigenvalue mass %.3g in covariance square root", clamp)
    return d2


@dataclass
class SetFeatures:
    stats: FeatureStats | None
    files: list[str] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def usable(self) -> int:
        return len(self.files)


def scene_features(files, extractor, partitions: int = DEFAULT_PARTITIONS, mode: str = "depth"):
    """Per-scene global vectors for a set of LRI1 files in sorted order.

    Returns ``(vectors, used_files, errors)``; unreadable files and extractor
    failures are reported per file instead of aborting.
    """
    vectors, used, errors = [], [], {}
    for path in sorted(str(p) for p in files):
        try:
            img = io.read_lri(path)
            vectors.append(extractor.scene_vector(img, partitions, mode))
            used.append(path)
        except ConfigError:
            raise
        except (LidmError, OSError, ValueError, RuntimeError) as exc:
            errors[path] = str(exc)
            logger.error("skipping %s: %s", path, exc)
    return vectors, used, errors


def set_stats(files, extractor, partitions: int = DEFAULT_PARTITIONS, mode: str = "depth",
              cache: str | Path | None = None) -> SetFeatures:
    if cache is not None and Path(cache).exists():
        stats = FeatureStats.load(cache)
        return SetFeatures(stats, [str(cache)], {})
    vectors, used, errors = scene_features(files, extractor, partitions, mode)
    if len(vectors) < 2:
        return SetFeatures(None, used, errors)
    stats = gaussian_stats(np.stack(vectors))
    if cache is not None:
        stats.save(cache)
    return SetFeatures(stats, used, errors)


def fr_pipeline(ref_files, gen_files, extractor, partitions: int = DEFAULT_PARTITIONS,
                mode: str = "depth", ref_cache=None) -> float:
    """Fréchet distance between reference and generated scene sets.

    Identical machinery serves FRID, FSVD and FPVD; only the extractor changes.
    """
    ref = set_stats(ref_files, extractor, partitions, mode, cache=ref_cache)
    gen = set_stats(gen_files, extractor, partitions, mode)
    for name, s in (("reference", ref), ("generated", gen)):
        if s.stats is None:
            raise DataError(f"{name} set has {s.usable} usable scene(s); at least 2 are required")
    return frechet_distance(ref.stats, gen.stats)
