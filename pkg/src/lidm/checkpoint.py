"""Checkpoint container: a ``torch.save`` dictionary written atomically.

Every checkpoint carries ``kind`` and ``version`` keys, the sensor and model
configuration blocks, named float32 parameter tensors, optimizer state and
the recorded loss curves.
"""

from __future__ import annotations

import io as _io
import sys
from dataclasses import asdict

import torch

from lidm.codec import SensorConfig
from lidm.errors import CheckpointError
from lidm.io import atomic_write

VERSION = 1


def _canonical(obj):
    """Rebuild containers with interned strings.

    Pickle memoizes strings by identity, so a payload assembled from a freshly
    loaded checkpoint would otherwise serialize differently from one built in
    a single run even when every value is equal.
    """
    if isinstance(obj, str):
        return sys.intern(obj)
    if isinstance(obj, dict):
        return {_canonical(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_canonical(v) for v in obj]
    if isinstance(obj, tuple):
        return tuple(_canonical(v) for v in obj)
    return obj


def save(path, payload: dict) -> None:
    buf = _io.BytesIO()
    torch.save(_canonical({"version": VERSION, **payload}), buf)
    atomic_write(path, buf.getvalue())


def load(path, kind: str | None = None) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as exc:  # torch raises a variety of unpickling errors
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if not isinstance(payload, dict) or payload.get("version") != VERSION:
        raise CheckpointError(f"{path}: not a checkpoint of version {VERSION}")
    if kind is not None and payload.get("kind") != kind:
        raise CheckpointError(f"{path}: expected a {kind!r} checkpoint, found {payload.get('kind')!r}")
    return payload


def sensor_to_dict(sensor: SensorConfig) -> dict:
    return asdict(sensor)


def sensor_from_dict(d: dict) -> SensorConfig:
    return SensorConfig(**d)
