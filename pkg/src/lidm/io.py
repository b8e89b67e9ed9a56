"""Binary file formats.

* KITTI-style ``.bin``: headerless little-endian float32 ``(x, y, z, intensity)``.
* ``LRI1`` range images: magic, ``u32 H, u32 W``, ``f32 fov_up, fov_down, omega,
  max_range``, then ``H*W`` float32 depths (row-major, ``-1`` = invalid).
* Token files: ``u32 count, u32 dim`` then ``count*dim`` float32.
* ``LFS1`` feature statistics: magic, ``u32 D, u64 n``, ``f64 mu[D]``,
  ``f64 sigma[D*D]`` (row-major).

All integers and floats are little-endian.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from lidm.codec import PointCloud, RangeImage, SensorConfig
from lidm.errors import FormatError

LRI_MAGIC = b"LRI1"
LFS_MAGIC = b"LFS1"
_LRI_HEADER = struct.Struct("<4sIIffff")
_TOK_HEADER = struct.Struct("<II")
_LFS_HEADER = struct.Struct("<4sIQ")


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_bin(path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of 16 bytes")
    arr = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    if not np.all(np.isfinite(arr[:, :3])):
        raise FormatError(f"{path}: non-finite coordinates")
    return PointCloud(arr[:, :3].astype(np.float64), intensity=arr[:, 3].astype(np.float32))


def encode_bin(cloud: PointCloud) -> bytes:
    out = np.zeros((len(cloud), 4), dtype="<f4")
    out[:, :3] = cloud.points
    if cloud.intensity is not None:
        out[:, 3] = cloud.intensity
    return out.tobytes()


def write_bin(path, cloud: PointCloud) -> None:
    atomic_write(path, encode_bin(cloud))


def encode_lri(img: RangeImage) -> bytes:
    cfg = img.config
    header = _LRI_HEADER.pack(LRI_MAGIC, cfg.height, cfg.width, cfg.fov_up, cfg.fov_down,
                              cfg.omega, cfg.max_range)
    return header + img.depth.astype("<f4").tobytes()


def decode_lri(raw: bytes, source="<bytes>") -> RangeImage:
    if len(raw) < _LRI_HEADER.size:
        raise FormatError(f"{source}: truncated header")
    magic, h, w, fov_up, fov_down, omega, max_range = _LRI_HEADER.unpack_from(raw)
    if magic != LRI_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    expected = _LRI_HEADER.size + 4 * h * w
    if len(raw) != expected:
        raise FormatError(f"{source}: expected {expected} bytes, found {len(raw)}")
    try:
        cfg = SensorConfig(h, w, fov_up, fov_down, omega)
    except ValueError as exc:
        raise FormatError(f"{source}: invalid sensor header ({exc})") from exc
    if not np.isclose(max_range, cfg.max_range, rtol=1e-5):
        raise FormatError(f"{source}: max_range {max_range} inconsistent with omega {omega}")
    depth = np.frombuffer(raw, dtype="<f4", offset=_LRI_HEADER.size).reshape(h, w)
    img = RangeImage(depth.astype(np.float32), cfg)
    try:
        img.validate()
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from exc
    return img


def write_lri(path, img: RangeImage) -> None:
    atomic_write(path, encode_lri(img))


def read_lri(path) -> RangeImage:
    return decode_lri(Path(path).read_bytes(), source=str(path))


def write_tokens(path, tokens) -> None:
    tokens = np.asarray(tokens, dtype="<f4")
    if tokens.ndim != 2:
        raise ValueError("token array must be 2-D (count, dim)")
    atomic_write(path, _TOK_HEADER.pack(*tokens.shape) + tokens.tobytes())


def read_tokens(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _TOK_HEADER.size:
        raise FormatError(f"{path}: truncated token header")
    count, dim = _TOK_HEADER.unpack_from(raw)
    if len(raw) != _TOK_HEADER.size + 4 * count * dim:
        raise FormatError(f"{path}: token payload size mismatch")
    return np.frombuffer(raw, dtype="<f4", offset=_TOK_HEADER.size).reshape(count, dim).astype(np.float32)


def write_stats(path, mu, sigma, n: int) -> None:
    mu = np.asarray(mu, dtype="<f8")
    sigma = np.asarray(sigma, dtype="<f8")
    d = mu.shape[0]
    if sigma.shape != (d, d):
        raise ValueError("covariance shape does not match mean")
    atomic_write(path, _LFS_HEADER.pack(LFS_MAGIC, d, n) + mu.tobytes() + sigma.tobytes())


def read_stats(path):
    """Return ``(mu, sigma, n)`` from an LFS1 file."""
    raw = Path(path).read_bytes()
    if len(raw) < _LFS_HEADER.size:
        raise FormatError(f"{path}: truncated stats header")
    magic, d, n = _LFS_HEADER.unpack_from(raw)
    if magic != LFS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if len(raw) != _LFS_HEADER.size + 8 * (d + d * d):
        raise FormatError(f"{path}: stats payload size mismatch")
    body = np.frombuffer(raw, dtype="<f8", offset=_LFS_HEADER.size)
    return body[:d].copy(), body[d:].reshape(d, d).copy(), int(n)
