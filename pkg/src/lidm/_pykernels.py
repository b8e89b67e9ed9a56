"""Pure numpy implementations of the hot kernels.

These are the reference semantics; ``_ckernels.pyx`` must agree with them.
"""

import numpy as np
from scipy.spatial import cKDTree

LABEL_NONE, LABEL_GROUND, LABEL_BOX, LABEL_CYLINDER, LABEL_WALL = 0, 1, 2, 3, 4

_BRUTE_LIMIT = 20_000_000


def scatter_min(flat_index, values, size):
    """Per-slot minimum of ``values``; empty slots hold +inf."""
    out = np.full(size, np.inf)
    np.minimum.at(out, np.asarray(flat_index, dtype=np.int64), np.asarray(values, dtype=np.float64))
    return out


def row_runs(mask):
    """Maximal circular runs of nonzero entries in each row.

    Returns ``(rows, starts, lengths)`` ordered by row, then start column. A
    fully set row yields a single run anchored at column 0.
    """
    mask = np.asarray(mask) != 0
    height, width = mask.shape
    rows, starts, lengths = [], [], []
    for r in range(height):
        row = mask[r]
        if not row.any():
            continue
        if row.all():
            rows.append(r)
            starts.append(0)
            lengths.append(width)
            continue
        k = int(np.argmin(row))  # first unset column
        rolled = np.roll(row, -k).astype(np.int8)
        edges = np.diff(np.concatenate(([0], rolled, [0])))
        s = np.nonzero(edges == 1)[0]
        e = np.nonzero(edges == -1)[0]
        cols = (s + k) % width
        order = np.argsort(cols, kind="stable")
        rows.extend([r] * len(s))
        starts.extend(cols[order].tolist())
        lengths.extend((e - s)[order].tolist())
    return (np.asarray(rows, dtype=np.int64), np.asarray(starts, dtype=np.int64),
            np.asarray(lengths, dtype=np.int64))


def _sqdist(q, p):
    dx = q[..., 0] - p[..., 0]
    dy = q[..., 1] - p[..., 1]
    dz = q[..., 2] - p[..., 2]
    return dx * dx + dy * dy + dz * dz


def nearest_sqdist(queries, refs):
    """Exact squared distance from each query to its nearest reference point."""
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    refs = np.ascontiguousarray(refs, dtype=np.float64)
    n, m = len(queries), len(refs)
    if n * m <= _BRUTE_LIMIT:
        out = np.empty(n)
        step = max(1, _BRUTE_LIMIT // (10 * max(m, 1)))
        for i in range(0, n, step):
            out[i:i + step] = _sqdist(queries[i:i + step, None, :], refs[None, :, :]).min(axis=1)
        return out
    k = min(8, m)
    _, idx = cKDTree(refs).query(queries, k=k)
    idx = idx.reshape(n, k)
    return _sqdist(queries[:, None, :], refs[idx]).min(axis=1)


def raycast(dirs, ground_z, boxes, cylinders, walls, max_range):
    """Nearest hit distance along unit rays from the origin.

    ``ground_z`` is the height of a horizontal ground plane (NaN disables it).
    Primitive arrays are rows of ``(cx, cy, cz, lx, ly, lz, yaw)`` for boxes,
    ``(cx, cy, cz, radius, height)`` for vertical cylinders and
    ``(x0, y0, x1, y1, z0, z1)`` for vertical wall rectangles. Returns
    ``(t, label)``; misses have ``t = inf`` and label 0.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    n = len(dirs)
    best = np.full(n, np.inf)
    label = np.zeros(n, dtype=np.int8)

    def offer(t, hit, lab):
        ok = hit & (t > 0.0) & (t <= max_range) & (t < best)
        best[ok] = t[ok]
        label[ok] = lab

    with np.errstate(divide="ignore", invalid="ignore"):
        if not np.isnan(ground_z):
            t = ground_z / dz
            offer(t, dz < 0.0, LABEL_GROUND)

        for cx, cy, cz, lx, ly, lz, yaw in np.asarray(boxes, dtype=np.float64).reshape(-1, 7):
            c, s = np.cos(yaw), np.sin(yaw)
            # ray in the box frame: rotate by -yaw around the box center
            ox, oy, oz = -(c * cx + s * cy), -(-s * cx + c * cy), -cz
            ldx, ldy = c * dx + s * dy, -s * dx + c * dy
            tmin = np.full(n, -np.inf)
            tmax = np.full(n, np.inf)
            hit = np.ones(n, dtype=bool)
            for o, d, h in ((ox, ldx, 0.5 * lx), (oy, ldy, 0.5 * ly), (oz, dz, 0.5 * lz)):
                flat = np.abs(d) < 1e-15
                hit &= ~(flat & ((o < -h) | (o > h)))
                t1 = (-h - o) / d
                t2 = (h - o) / d
                lo = np.where(flat, -np.inf, np.minimum(t1, t2))
                hi = np.where(flat, np.inf, np.maximum(t1, t2))
                tmin = np.maximum(tmin, lo)
                tmax = np.minimum(tmax, hi)
            hit &= tmax >= np.maximum(tmin, 0.0)
            t = np.where(tmin > 0.0, tmin, tmax)
            offer(t, hit, LABEL_BOX)

        for cx, cy, cz, rad, height in np.asarray(cylinders, dtype=np.float64).reshape(-1, 5):
            z0, z1 = cz - 0.5 * height, cz + 0.5 * height
            a = dx * dx + dy * dy
            b = -2.0 * (cx * dx + cy * dy)
            cc = cx * cx + cy * cy - rad * rad
            disc = b * b - 4.0 * a * cc
            has = (disc >= 0.0) & (a > 0.0)
            sq = np.sqrt(np.where(has, disc, 0.0))
            for t in ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)):
                z = t * dz
                offer(t, has & (z >= z0) & (z <= z1), LABEL_CYLINDER)
            for zc in (z0, z1):
                t = zc / dz
                px = t * dx - cx
                py = t * dy - cy
                offer(t, (dz != 0.0) & (px * px + py * py <= rad * rad), LABEL_CYLINDER)

        for x0, y0, x1, y1, z0, z1 in np.asarray(walls, dtype=np.float64).reshape(-1, 6):
            sx, sy = x1 - x0, y1 - y0
            denom = dx * sy - dy * sx
            t = (x0 * sy - y0 * sx) / denom
            u = (x0 * dy - y0 * dx) / denom
            z = t * dz
            offer(t, (denom != 0.0) & (u >= 0.0) & (u <= 1.0) & (z >= z0) & (z <= z1), LABEL_WALL)

    return best, label
