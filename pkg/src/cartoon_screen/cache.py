"""On-disk feature cache, one file per (video, stream, descriptor, weights digest).

File layout, all little-endian:

    b"EFV1" | u32 dim | u32 n_frames | n_frames*dim f32 (frame-major) | dim f32 (pooled)
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from urllib.parse import quote

import numpy as np

from .errors import FeatureError

MAGIC = b"EFV1"
_HEADER = struct.Struct("<4sII")
_F32 = np.dtype("<f4")


def cache_path(cache_dir, video_id: str, stream: str, descriptor_name: str, digest: str) -> Path:
    safe_id = quote(video_id, safe="")
    return Path(cache_dir) / descriptor_name / f"{safe_id}.{stream}.{digest[:16]}.efv"


def encode(frames: np.ndarray, pooled: np.ndarray) -> bytes:
    frames = np.asarray(frames, dtype=_F32)
    pooled = np.asarray(pooled, dtype=_F32)
    if frames.ndim != 2 or pooled.shape != (frames.shape[1],):
        raise FeatureError(f"bad cache payload shapes {frames.shape}, {pooled.shape}")
    n, dim = frames.shape
    return _HEADER.pack(MAGIC, dim, n) + frames.tobytes(order="C") + pooled.tobytes()


def decode(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(data) < _HEADER.size:
        raise FeatureError("cache file truncated")
    magic, dim, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FeatureError(f"bad cache magic {magic!r}")
    expected = _HEADER.size + 4 * dim * (n + 1)
    if len(data) != expected:
        raise FeatureError(f"cache size {len(data)} != expected {expected}")
    body = np.frombuffer(data, dtype=_F32, offset=_HEADER.size)
    frames = body[: n * dim].reshape(n, dim).astype(np.float32)
    pooled = body[n * dim :].astype(np.float32)
    return frames, pooled


def write_atomic(path, data: bytes) -> Path:
    """Write to a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_cache(path, frames: np.ndarray, pooled: np.ndarray) -> Path:
    return write_atomic(path, encode(frames, pooled))


def read_cache(path) -> tuple[np.ndarray, np.ndarray]:
    return decode(Path(path).read_bytes())
