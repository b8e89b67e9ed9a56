"""Condition pathways: semantic range-view maps and token sequences."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from lidm.errors import DataError


def encode_condition_map(label_map, num_classes: int, f_c: int, f_p: int) -> torch.Tensor:
    """One-hot an H x W class-id map and average-pool it to latent resolution.

    Each latent cell averages an ``f_p`` x ``f_c * f_p`` block, matching the
    autoencoder's downsampling geometry. Returns ``num_classes x h x w``.
    """
    ids = np.asarray(label_map)
    if ids.ndim != 2:
        raise DataError(f"condition map must be 2-D, got shape {ids.shape}")
    if not np.issubdtype(ids.dtype, np.integer):
        if not np.all(ids == np.round(ids)):
            raise DataError("condition map holds non-integer class ids")
        ids = ids.astype(np.int64)
    bad = (ids < 0) | (ids >= num_classes)
    if np.any(bad):
        raise DataError(f"class id {int(ids[bad][0])} outside vocabulary of {num_classes}")
    h, w = ids.shape
    if h % f_p or w % (f_c * f_p):
        raise DataError(f"condition map {h}x{w} is not divisible into {f_p}x{f_c * f_p} blocks")
    onehot = F.one_hot(torch.from_numpy(ids.astype(np.int64)), num_classes).permute(2, 0, 1).float()
    return F.avg_pool2d(onehot[None], (f_p, f_c * f_p))[0]


def identity_provider(vector) -> np.ndarray:
    return np.asarray(vector, dtype=np.float32)


def embed_views(views: Sequence, provider: Callable = identity_provider) -> torch.Tensor:
    """One token per view, in order, as an L x D float32 tensor.

    ``provider`` maps a view (an image, a prompt, or a precomputed vector) to a
    1-D embedding; the default passes vectors through unchanged.
    """
    if len(views) == 0:
        raise DataError("at least one view is required")
    tokens = [np.asarray(provider(v), dtype=np.float32).reshape(-1) for v in views]
    dims = {t.shape[0] for t in tokens}
    if len(dims) != 1:
        raise DataError(f"view embeddings have differing dimensions {sorted(dims)}")
    return torch.from_numpy(np.stack(tokens))
