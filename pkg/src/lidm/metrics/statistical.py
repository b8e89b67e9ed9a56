"""Set- and pair-level statistical metrics: BEV JSD, MMD, Chamfer, EMD."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from lidm import kernels
from lidm.codec import PointCloud
from lidm.errors import DataError

logger = logging.getLogger(__name__)

JSD_CELL = 0.05
MMD_CELL = 0.5
HALF_EXTENT = 50.0
EMD_EXACT_CAP = 1024


def _as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3) if np.ndim(cloud) else np.empty((0, 3))


@dataclass
class BevGrid:
    cells: np.ndarray  # (N, N) counts indexed [ix, iy]
    half_extent: float
    cell_size: float
    dropped: int = 0

    @property
    def size(self) -> int:
        return self.cells.shape[0]

    @property
    def total(self) -> int:
        return int(self.cells.sum())


def _grid_size(half_extent: float, cell_size: float) -> int:
    if half_extent <= 0 or cell_size <= 0:
        raise DataError("extent and cell size must be positive")
    return int(round(2.0 * half_extent / cell_size))


def _bev_flat(points: np.ndarray, half_extent: float, cell_size: float):
    """Flat cell indices of in-extent points plus the number dropped."""
    n = _grid_size(half_extent, cell_size)
    x, y = points[:, 0], points[:, 1]
    inside = (np.abs(x) < half_extent) & (np.abs(y) < half_extent)
    ix = np.floor((x[inside] + half_extent) / cell_size).astype(np.int64)
    iy = np.floor((y[inside] + half_extent) / cell_size).astype(np.int64)
    np.clip(ix, 0, n - 1, out=ix)
    np.clip(iy, 0, n - 1, out=iy)
    return ix * n + iy, int(len(points) - np.count_nonzero(inside)), n


def bev_histogram(cloud, half_extent: float = HALF_EXTENT, cell_size: float = JSD_CELL) -> BevGrid:
    """Top-down point counts; cell index is ``floor((coord + half_extent) / cell_size)``."""
    flat, dropped, n = _bev_flat(_as_points(cloud), half_extent, cell_size)
    cells = np.bincount(flat, minlength=n * n).reshape(n, n)
    return BevGrid(cells, half_extent, cell_size, dropped)


def jsd_from_distributions(p, q) -> float:
    """Base-2 Jensen-Shannon divergence of two normalized histograms."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(a[nz] / m[nz])))

    return min(max(0.5 * kl(p) + 0.5 * kl(q), 0.0), 1.0)


def _pooled_counts(clouds, half_extent, cell_size) -> np.ndarray:
    n = _grid_size(half_extent, cell_size)
    total = np.zeros(n * n, dtype=np.int64)
    for cloud in clouds:
        flat, _, _ = _bev_flat(_as_points(cloud), half_extent, cell_size)
        total += np.bincount(flat, minlength=n * n)
    return total


def jsd(set_r, set_s, half_extent: float = HALF_EXTENT, cell_size: float = JSD_CELL) -> float:
    """JSD between the pooled BEV occupancy of two sets of clouds."""
    if not len(set_r) or not len(set_s):
        raise DataError("JSD needs two non-empty sets")
    hr = _pooled_counts(set_r, half_extent, cell_size)
    hs = _pooled_counts(set_s, half_extent, cell_size)
    if hr.sum() == 0 or hs.sum() == 0:
        raise DataError("a set has no points inside the BEV extent; distribution undefined")
    return jsd_from_distributions(hr / hr.sum(), hs / hs.sum())


def chamfer(x, y) -> float:
    """Sum of nearest squared distances in both directions."""
    px, py = _as_points(x), _as_points(y)
    if len(px) == 0 or len(py) == 0:
        raise DataError("Chamfer distance needs two non-empty clouds")
    # fsum is correctly rounded, so the value is independent of point order
    return math.fsum(np.concatenate([kernels.nearest_sqdist(px, py), kernels.nearest_sqdist(py, px)]))


def pairwise_distances(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    dx = px[:, None, 0] - py[None, :, 0]
    dy = px[:, None, 1] - py[None, :, 1]
    dz = px[:, None, 2] - py[None, :, 2]
    return np.sqrt(dx * dx + dy * dy + dz * dz)


def emd(x, y, approximate: bool = False, cap: int = EMD_EXACT_CAP) -> float:
    """Minimum over bijections of summed Euclidean matching distance.

    Sets larger than ``cap`` require ``approximate=True``, which switches to
    entropic optimal transport and logs the duality gap of the estimate.
    """
    px, py = _as_points(x), _as_points(y)
    if len(px) != len(py):
        raise DataError(f"EMD needs equal-size sets, got {len(px)} and {len(py)}")
    if len(px) == 0:
        return 0.0
    if approximate:
        value, gap = sinkhorn_emd(px, py)
        logger.info("approximate EMD %.6g (duality gap %.3g)", value, gap)
        return value
    if len(px) > cap:
        raise DataError(f"{len(px)} points exceed the exact EMD cap {cap}; pass approximate=True")
    cost = pairwise_distances(px, py)
    rows, cols = linear_sum_assignment(cost)
    return math.fsum(cost[rows, cols])


def sinkhorn_emd(px, py, epsilon: float | None = None, iters: int = 500) -> tuple[float, float]:
    """Entropic EMD estimate and its duality gap.

    Runs log-domain Sinkhorn with uniform marginals, rounds the plan onto the
    transport polytope, and bounds the exact EMD between a feasible dual value
    (c-transform of the potentials) and the primal cost of the rounded plan.
    Returns ``(primal, primal - dual)``; both scaled to the bijection sum.
    """
    px, py = _as_points(px), _as_points(py)
    n = len(px)
    cost = pairwise_distances(px, py)
    if epsilon is None:
        epsilon = max(1e-3 * float(cost.max()), 1e-12)
    log_w = -math.log(n)
    f = np.zeros(n)
    g = np.zeros(n)
    for _ in range(iters):
        f = -epsilon * logsumexp((g[None, :] - cost) / epsilon + log_w, axis=1)
        g = -epsilon * logsumexp((f[:, None] - cost) / epsilon + log_w, axis=0)
    plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon + 2 * log_w)
    # Altschuler et al. rounding onto exact uniform marginals
    r = np.full(n, 1.0 / n)
    plan *= np.minimum(r / np.maximum(plan.sum(axis=1), 1e-300), 1.0)[:, None]
    plan *= np.minimum(r / np.maximum(plan.sum(axis=0), 1e-300), 1.0)[None, :]
    er = r - plan.sum(axis=1)
    ec = r - plan.sum(axis=0)
    if er.sum() > 0:
        plan += np.outer(er, ec) / er.sum()
    primal = float((plan * cost).sum()) * n
    g_feasible = (cost - f[:, None]).min(axis=0)
    dual = float(f.sum() + g_feasible.sum())
    return primal, max(primal - dual, 0.0)


def bev_centers(cloud, half_extent: float = HALF_EXTENT, cell_size: float = MMD_CELL) -> np.ndarray:
    """Centers (z = 0) of the occupied BEV cells of one cloud, sorted by cell index."""
    flat, _, n = _bev_flat(_as_points(cloud), half_extent, cell_size)
    cells = np.unique(flat)
    ix, iy = np.divmod(cells, n)
    out = np.zeros((len(cells), 3))
    out[:, 0] = -half_extent + (ix + 0.5) * cell_size
    out[:, 1] = -half_extent + (iy + 0.5) * cell_size
    return out


def mmd(set_r, set_s, half_extent: float = HALF_EXTENT, cell_size: float = MMD_CELL) -> float:
    """Mean over reference clouds of the smallest Chamfer distance to any sample."""
    if not len(set_r) or not len(set_s):
        raise DataError("MMD needs two non-empty sets")
    ref = [bev_centers(c, half_extent, cell_size) for c in set_r]
    gen = [bev_centers(c, half_extent, cell_size) for c in set_s]
    if any(len(c) == 0 for c in ref + gen):
        raise DataError("a cloud has no points inside the BEV extent")
    total = 0.0
    for y in ref:
        total += min(chamfer(x, y) for x in gen)
    return total / len(ref)
