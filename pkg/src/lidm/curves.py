"""Curve-cloud decomposition of range images.

A curve is a maximal run of valid pixels in one row, wrapping around the
azimuth seam. A fully valid row is a single curve anchored at column 0.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from lidm import kernels
from lidm.codec import RangeImage, pixel_centers, ray_directions


@dataclass(frozen=True)
class Curve:
    row: int
    start_col: int
    cols: np.ndarray  # column indices in scan order, advancing mod W
    depths: np.ndarray
    points: np.ndarray  # (n, 3)

    def __len__(self) -> int:
        return len(self.cols)


@dataclass
class CurveCloud:
    curves: list[Curve]
    width: int

    def __len__(self) -> int:
        return len(self.curves)


def extract_curves(img: RangeImage) -> CurveCloud:
    cfg = img.config
    rows, starts, lengths = kernels.row_runs(img.mask)
    curves = []
    for r, s, n in zip(rows.tolist(), starts.tolist(), lengths.tolist()):
        cols = (s + np.arange(n)) % cfg.width
        depths = img.depth[r, cols].astype(np.float64)
        a, b = pixel_centers(np.full(n, r), cols, cfg)
        pts = ray_directions(a, b, cfg) * depths[:, None]
        curves.append(Curve(r, s, cols, depths, pts))
    return CurveCloud(curves, cfg.width)


@dataclass
class CurveStats:
    count: int
    total_length: int
    mean_length: float
    histogram: dict[int, int]

    def report(self) -> str:
        lines = [f"curve_count={self.count}", f"total_length={self.total_length}",
                 f"mean_length={self.mean_length:.6g}"]
        lines += [f"length_{k}={v}" for k, v in sorted(self.histogram.items())]
        return "\n".join(lines)


def curve_stats(cc: CurveCloud) -> CurveStats:
    lengths = [len(c) for c in cc.curves]
    total = sum(lengths)
    mean = total / len(lengths) if lengths else 0.0
    return CurveStats(len(lengths), total, mean, dict(Counter(lengths)))
