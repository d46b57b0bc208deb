"""Manifest loading, video probing, 1 fps frame sampling and static-stream preprocessing."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import av
import cv2
import numpy as np

from .errors import ManifestError, VideoDecodeError

log = logging.getLogger(__name__)

INPUT_SIDE = 224
# Grid timestamps within this distance of the duration are treated as past the end.
GRID_EPS = 1e-6


class Label(str, Enum):
    SENSITIVE = "sensitive"
    NON_SENSITIVE = "non_sensitive"

    @property
    def positive(self) -> bool:
        return self is Label.SENSITIVE


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"
    UNASSIGNED = "unassigned"


class Stream(str, Enum):
    STATIC = "static"
    MOTION = "motion"


@dataclass
class VideoRecord:
    id: str
    path: Path
    label: Label
    split: Split = Split.UNASSIGNED
    duration_s: float | None = None


@dataclass
class FrameImage:
    """One decoded RGB frame, ``pixels`` is (height, width, 3) uint8."""

    pixels: np.ndarray
    timestamp_s: float = 0.0

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"frame must be HxWx3 with H,W >= 1, got {px.shape}")
        if px.dtype != np.uint8:
            raise ValueError(f"frame pixels must be uint8, got {px.dtype}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class InputTensor:
    """Network-ready 224x224x3 float32 image (HWC)."""

    values: np.ndarray
    stream: Stream = Stream.STATIC
    timestamp_s: float = 0.0

    def __post_init__(self):
        if self.values.shape != (INPUT_SIDE, INPUT_SIDE, 3):
            raise ValueError(f"input tensor must be 224x224x3, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("input tensor contains non-finite values")


def _parse_label(raw, line_no):
    try:
        return Label(raw)
    except ValueError:
        raise ManifestError(f"unknown label {raw!r} (expected 'sensitive' or 'non_sensitive')", line_no) from None


def _parse_split(raw, line_no):
    if raw is None:
        return Split.UNASSIGNED
    if raw not in (Split.TRAIN.value, Split.TEST.value):
        raise ManifestError(f"unknown split {raw!r} (expected 'train' or 'test')", line_no)
    return Split(raw)


def load_manifest(path: str | os.PathLike) -> list[VideoRecord]:
    """Read a JSON-lines manifest.

    Relative media paths are resolved against the manifest's directory.
    Blank lines are ignored.
    """
    path = Path(path)
    base = path.parent
    records: list[VideoRecord] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON: {exc.msg}", line_no) from None
            if not isinstance(obj, dict):
                raise ManifestError("expected a JSON object", line_no)
            for key in ("id", "path", "label"):
                if key not in obj:
                    raise ManifestError(f"missing key {key!r}", line_no)
            vid = str(obj["id"])
            if vid in seen:
                raise ManifestError(f"duplicate id {vid!r} (first seen on line {seen[vid]})", line_no)
            seen[vid] = line_no
            media = Path(obj["path"])
            if not media.is_absolute():
                media = base / media
            records.append(
                VideoRecord(
                    id=vid,
                    path=media,
                    label=_parse_label(obj["label"], line_no),
                    split=_parse_split(obj.get("split"), line_no),
                )
            )
    if not records:
        log.warning("manifest %s contains no records", path)
    return records


def write_manifest(records: Sequence[VideoRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            obj = {"id": rec.id, "path": str(rec.path), "label": rec.label.value}
            if rec.split is not Split.UNASSIGNED:
                obj["split"] = rec.split.value
            fh.write(json.dumps(obj) + "\n")


def _open(path):
    if not Path(path).exists():
        raise VideoDecodeError(f"{path}: file does not exist")
    try:
        container = av.open(str(path))
    except (av.FFmpegError, OSError) as exc:
        raise VideoDecodeError(f"{path}: cannot open container ({exc})") from None
    if not container.streams.video:
        container.close()
        raise VideoDecodeError(f"{path}: no video stream")
    return container


def probe_duration(path: str | os.PathLike) -> float:
    """Duration in seconds, from stream metadata or, failing that, by decoding."""
    with _open(path) as container:
        stream = container.streams.video[0]
        if stream.duration is not None and stream.time_base is not None:
            return float(stream.duration * stream.time_base)
        if container.duration is not None:
            return container.duration / av.time_base
        rate = stream.average_rate or 25
        try:
            n = sum(1 for _ in container.decode(stream))
        except av.FFmpegError as exc:
            raise VideoDecodeError(f"{path}: decode failed ({exc})") from None
        return n / float(rate)


def probe(video: VideoRecord) -> VideoRecord:
    """Fill ``duration_s``; raises VideoDecodeError for unreadable media."""
    video.duration_s = probe_duration(video.path)
    return video


def sampling_grid(duration_s: float, rate_fps: float = 1.0) -> list[float]:
    """Timestamps 0, 1/rate, 2/rate, ... strictly below the duration, at least one."""
    if rate_fps <= 0:
        raise ValueError("rate_fps must be positive")
    n = max(1, math.ceil(duration_s * rate_fps - GRID_EPS))
    return [k / rate_fps for k in range(n)]


def iter_decoded(path, options=None) -> Iterator[tuple[float, av.VideoFrame]]:
    """Yield (time_s, frame) for every decoded video frame in presentation order."""
    container = _open(path)
    try:
        stream = container.streams.video[0]
        if options:
            stream.codec_context.options = options
        rate = float(stream.average_rate or 25)
        try:
            for idx, frame in enumerate(container.decode(stream)):
                t = frame.time if frame.time is not None else idx / rate
                yield float(t), frame
        except av.FFmpegError as exc:
            raise VideoDecodeError(f"{path}: decode failed ({exc})") from None
    finally:
        container.close()


def pick_on_grid(frames, grid):
    """Map each grid time to the last frame shown at or before it.

    ``frames`` is an iterable of (time, payload) in increasing time.
    Yields (grid_time, payload). Grid times beyond the last frame get the last frame.
    """
    k = 0
    prev = None
    for t, payload in frames:
        while k < len(grid) and grid[k] < t - GRID_EPS:
            yield grid[k], prev if prev is not None else payload
            k += 1
        if k >= len(grid):
            return
        prev = payload
    if prev is None:
        return
    while k < len(grid):
        yield grid[k], prev
        k += 1


def sample_frames(video: VideoRecord, rate_fps: float = 1.0) -> list[FrameImage]:
    if video.duration_s is None:
        probe(video)
    grid = sampling_grid(video.duration_s, rate_fps)
    out = [
        FrameImage(frame.to_ndarray(format="rgb24"), timestamp_s=t)
        for t, frame in pick_on_grid(iter_decoded(video.path), grid)
    ]
    if not out:
        raise VideoDecodeError(f"{video.path}: no decodable frames")
    return out


def scaled_size(width: int, height: int, side: int = INPUT_SIDE) -> tuple[int, int]:
    """Shorter side -> ``side``, longer side scaled by the same factor (half-up rounding)."""
    scale = side / min(width, height)
    if width <= height:
        return side, max(side, int(math.floor(height * scale + 0.5)))
    return max(side, int(math.floor(width * scale + 0.5))), side


def crop_window(length: int, side: int = INPUT_SIDE) -> tuple[int, int]:
    """Start/stop indices of the centered ``side`` window on an axis of ``length``."""
    start = (length - side) // 2
    return start, start + side


def resize_and_crop(image: np.ndarray, side: int = INPUT_SIDE) -> np.ndarray:
    """Aspect-preserving bilinear resize of the short side, then center crop of the long side."""
    h, w = image.shape[:2]
    new_w, new_h = scaled_size(w, h, side)
    if (new_w, new_h) != (w, h):
        image = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    y0, y1 = crop_window(new_h, side)
    x0, x1 = crop_window(new_w, side)
    return image[y0:y1, x0:x1]


def normalize(image: np.ndarray, means=(0.0, 0.0, 0.0), scales=(1.0, 1.0, 1.0)) -> np.ndarray:
    means = np.asarray(means, dtype=np.float32)
    scales = np.asarray(scales, dtype=np.float32)
    return (image.astype(np.float32) - means) / scales


def preprocess_frame(frame: FrameImage, model=None) -> InputTensor:
    """Resize/crop to 224x224 and subtract the model's per-channel means.

    ``model`` is any object with ``channel_means``/``channel_scales`` (a
    ModelDescriptor); without one the pixel values pass through unchanged.
    """
    cropped = resize_and_crop(frame.pixels)
    if model is None:
        values = cropped.astype(np.float32)
    else:
        values = normalize(cropped, model.channel_means, model.channel_scales)
    return InputTensor(np.ascontiguousarray(values), Stream.STATIC, frame.timestamp_s)
