"""Feature extractors for the Fréchet metrics.

Pretrained segmentation backbones are not bundled. The toy extractors are
deterministic stand-ins with the same interface: a range-image network with
frozen seeded weights, and hand-crafted per-voxel features for the two volume
modalities. Real backbones plug in through :class:`ExternalExtractor`.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from lidm.codec import RangeImage, unproject
from lidm.errors import ConfigError
from lidm.metrics.frechet import partition_aggregate, partition_aggregate_points
from lidm.nn import CircularConv2d, seeded_generator

TAP_MODES = ("encoder", "decoder", "all", "final")


class ToyRangeNet(nn.Module):
    """Small UNet-like range-image network with circular azimuth padding.

    Two horizontal stride-2 stages give a stride product of 4. The final layer
    sees the upsampled decoder stream together with the input and the first
    encoder activation. Every stage output is exposed as a tap.
    """

    stride = 4

    def __init__(self, in_channels=2, out_channels=32, width=16, seed=0, dtype=torch.float32):
        super().__init__()
        self.e1 = CircularConv2d(in_channels, width, 3)
        self.e2 = CircularConv2d(width, 2 * width, (3, 4), stride=(1, 2))
        self.e3 = CircularConv2d(2 * width, 2 * width, (3, 4), stride=(1, 2))
        self.d1 = CircularConv2d(2 * width, 2 * width, 3)
        self.d2 = CircularConv2d(4 * width, width, 3)
        self.final = CircularConv2d(2 * width + in_channels, out_channels, 3)
        g = seeded_generator(seed)
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, nn.Conv2d):
                    fan_in = m.weight[0].numel()
                    m.weight.copy_(torch.randn(m.weight.shape, generator=g) * (2.0 / fan_in) ** 0.5)
                    m.bias.copy_(torch.randn(m.bias.shape, generator=g) * 0.01)
        self.to(dtype)
        self.requires_grad_(False)
        self.eval()

    def taps(self, x):
        """Return ``(encoder_taps, decoder_taps)``; the last decoder tap is the final output."""
        act = F.leaky_relu
        e1 = act(self.e1(x), 0.1)
        e2 = act(self.e2(e1), 0.1)
        e3 = act(self.e3(e2), 0.1)
        d1 = act(self.d1(F.interpolate(e3, scale_factor=(1, 2), mode="nearest")), 0.1)
        d2 = act(self.d2(F.interpolate(torch.cat([d1, e2], 1), scale_factor=(1, 2), mode="nearest")), 0.1)
        out = self.final(torch.cat([d2, x, e1], 1))
        return [e1, e2, e3], [d1, d2, out]

    def forward(self, x):
        return self.taps(x)[1][-1]


def select_taps(enc, dec, tap_mode: str):
    if tap_mode == "encoder":
        return list(enc)
    if tap_mode == "decoder":
        return list(dec)
    if tap_mode == "all":
        return list(enc) + list(dec)
    if tap_mode == "final":
        return [dec[-1]]
    raise ConfigError(f"unknown tap mode {tap_mode!r}; expected one of {TAP_MODES}")


def range_input(img: RangeImage, dtype=torch.float32) -> torch.Tensor:
    x = np.stack([img.values, img.mask.astype(np.float64)])
    return torch.from_numpy(x).to(dtype)[None]


class FeatureExtractor:
    """Interface: ``scene_vector(img, partitions, mode)`` returns a ``partitions * channels`` vector."""

    modality: str = "range_image"
    channels: int = 0
    stride: int = 1

    def scene_vector(self, img: RangeImage, partitions: int, mode: str) -> np.ndarray:
        raise NotImplementedError


class ToyRangeExtractor(FeatureExtractor):
    modality = "range_image"

    def __init__(self, channels=32, seed=0):
        self.net = ToyRangeNet(out_channels=channels, seed=seed)
        self.channels = channels
        self.stride = ToyRangeNet.stride

    def activations(self, img: RangeImage) -> np.ndarray:
        with torch.no_grad():
            out = self.net(range_input(img))
        return out[0].permute(1, 2, 0).double().numpy()

    def scene_vector(self, img, partitions, mode):
        return partition_aggregate(self.activations(img), img.mask, partitions, mode)


@dataclass
class VoxelSet:
    keys: np.ndarray  # (V, 3) integer voxel coordinates, lexicographically sorted
    counts: np.ndarray
    centroids: np.ndarray
    z_min: np.ndarray
    z_max: np.ndarray
    inverse: np.ndarray  # voxel index of every input point
    voxel_size: float

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def centers(self) -> np.ndarray:
        return (self.keys + 0.5) * self.voxel_size


def voxelize_sparse(cloud, voxel_size: float) -> VoxelSet:
    """Occupied voxels keyed by ``floor(p / voxel_size)`` with counts and centroids."""
    if voxel_size <= 0:
        raise ConfigError("voxel size must be positive")
    pts = cloud.points if hasattr(cloud, "points") else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    keys = np.floor(pts / voxel_size).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    v = len(uniq)
    counts = np.bincount(inverse, minlength=v)
    sums = np.zeros((v, 3))
    np.add.at(sums, inverse, pts)
    z_min = np.full(v, np.inf)
    z_max = np.full(v, -np.inf)
    np.minimum.at(z_min, inverse, pts[:, 2])
    np.maximum.at(z_max, inverse, pts[:, 2])
    centroids = sums / np.maximum(counts, 1)[:, None]
    return VoxelSet(uniq, counts, centroids, z_min, z_max, inverse, voxel_size)


class ToyVoxelExtractor(FeatureExtractor):
    """Hand-crafted per-voxel features pooled per partition (sparse-volume modality)."""

    modality = "sparse_volume"
    channels = 8

    def __init__(self, voxel_size=0.25):
        self.voxel_size = voxel_size

    def voxel_features(self, vox: VoxelSet, max_range: float) -> np.ndarray:
        s = vox.voxel_size
        offset = (vox.centroids - vox.centers) / s
        spread = (vox.z_max - vox.z_min) / s
        horiz = np.hypot(vox.centroids[:, 0], vox.centroids[:, 1]) / max_range
        return np.column_stack([offset, np.log1p(vox.counts), vox.centroids[:, 2] / 3.0, spread, horiz,
                                np.ones(len(vox))])

    def scene_vector(self, img, partitions, mode):
        cloud = unproject(img)
        if len(cloud) == 0:
            return np.zeros(partitions * self.channels)
        vox = voxelize_sparse(cloud, self.voxel_size)
        feats = self.voxel_features(vox, img.config.max_range)
        return partition_aggregate_points(feats, vox.centroids, img.config.max_range, partitions, mode)


class ToyPointVoxelExtractor(ToyVoxelExtractor):
    """Voxel features plus per-point scatter around each centroid (point-volume modality)."""

    modality = "point_volume"
    channels = 11

    def scene_vector(self, img, partitions, mode):
        cloud = unproject(img)
        if len(cloud) == 0:
            return np.zeros(partitions * self.channels)
        vox = voxelize_sparse(cloud, self.voxel_size)
        dev = np.abs(cloud.points - vox.centroids[vox.inverse])
        scatter = np.zeros((len(vox), 3))
        np.add.at(scatter, vox.inverse, dev)
        scatter /= vox.counts[:, None] * vox.voxel_size
        feats = np.column_stack([self.voxel_features(vox, img.config.max_range), scatter])
        return partition_aggregate_points(feats, vox.centroids, img.config.max_range, partitions, mode)


class ExternalExtractor(FeatureExtractor):
    """Adapter for a user-supplied backbone given as ``"package.module:factory"``.

    The factory must return an object with ``scene_vector(img, partitions, mode)``.
    """

    def __init__(self, spec: str):
        module_name, _, attr = spec.partition(":")
        if not module_name or not attr:
            raise ConfigError(f"external extractor must look like 'module:factory', got {spec!r}")
        self.impl = getattr(importlib.import_module(module_name), attr)()
        self.modality = getattr(self.impl, "modality", "range_image")
        self.channels = getattr(self.impl, "channels", 0)
        self.stride = getattr(self.impl, "stride", 1)

    def scene_vector(self, img, partitions, mode):
        return np.asarray(self.impl.scene_vector(img, partitions, mode), dtype=np.float64)


DEFAULT_EXTRACTOR = {"frid": "toy-range", "fsvd": "toy-voxel", "fpvd": "toy-pointvoxel"}


def get_extractor(name: str, external: str | None = None, **kwargs) -> FeatureExtractor:
    if name == "toy-range":
        return ToyRangeExtractor(**kwargs)
    if name == "toy-voxel":
        return ToyVoxelExtractor(**kwargs)
    if name == "toy-pointvoxel":
        return ToyPointVoxelExtractor(**kwargs)
    if name == "external":
        if not external:
            raise ConfigError("the external extractor needs a 'module:factory' spec")
        return ExternalExtractor(external)
    raise ConfigError(f"unknown extractor {name!r}")
