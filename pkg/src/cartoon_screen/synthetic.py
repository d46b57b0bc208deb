"""Synthetic video generation for tests, demos and the acceptance suite.

Videos are encoded with the FFmpeg build bundled in PyAV, so they carry real
codec-level motion vectors.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import av
import cv2
import numpy as np


def textured_canvas(height: int, width: int, seed: int = 0, blur: float = 1.5) -> np.ndarray:
    """Smoothed random RGB texture; rich enough for unambiguous block matching."""
    rng = np.random.default_rng(seed)
    noise = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    return cv2.GaussianBlur(noise, (0, 0), blur)


def encoder_options(codec: str, intra_only: bool = False, bframes: int = 0) -> dict:
    if codec == "libx264":
        opts = {"crf": "16", "preset": "medium", "bf": str(bframes), "refs": "1"}
        if intra_only:
            opts["x264-params"] = "keyint=1"
        return opts
    opts = {"qscale": "2", "bf": str(bframes)}
    if intra_only:
        opts["g"] = "1"
    return opts


def write_video(
    path,
    frames: Iterable[np.ndarray],
    fps: int = 10,
    codec: str = "mpeg4",
    intra_only: bool = False,
    bframes: int = 0,
) -> Path:
    """Encode RGB uint8 frames (all the same size, even dimensions) into ``path``."""
    path = Path(path)
    frames = iter(frames)
    first = next(frames)
    h, w = first.shape[:2]
    with av.open(str(path), "w") as out:
        stream = out.add_stream(codec, rate=fps)
        stream.width, stream.height = w, h
        stream.pix_fmt = "yuv420p"
        stream.options = encoder_options(codec, intra_only, bframes)
        if intra_only:
            stream.codec_context.gop_size = 1
        for img in _chain(first, frames):
            frame = av.VideoFrame.from_ndarray(np.ascontiguousarray(img), format="rgb24")
            for packet in stream.encode(frame):
                out.mux(packet)
        for packet in stream.encode():
            out.mux(packet)
    return path


def _chain(first, rest):
    yield first
    yield from rest


def translating_frames(
    n_frames: int,
    shift: tuple[int, int],
    size: tuple[int, int] = (320, 240),
    seed: int = 0,
) -> list[np.ndarray]:
    """Frames whose content moves by ``shift`` = (dx, dy) pixels per frame.

    Frame k equals frame 0 translated by k*shift, i.e. a block at reference
    position (X, Y) reappears at (X+dx, Y+dy) in the next frame.
    """
    w, h = size
    dx, dy = shift
    pad_x = abs(dx) * n_frames + 1
    pad_y = abs(dy) * n_frames + 1
    canvas = textured_canvas(h + 2 * pad_y, w + 2 * pad_x, seed)
    out = []
    for k in range(n_frames):
        x0 = pad_x - k * dx
        y0 = pad_y - k * dy
        out.append(np.ascontiguousarray(canvas[y0 : y0 + h, x0 : x0 + w]))
    return out


def write_translating_video(path, shift, n_frames=12, fps=10, size=(320, 240), codec="mpeg4", seed=0, **kw) -> Path:
    return write_video(path, translating_frames(n_frames, shift, size, seed), fps=fps, codec=codec, **kw)


def class_video_frames(
    sensitive: bool,
    n_frames: int = 20,
    size: tuple[int, int] = (160, 128),
    seed: int = 0,
) -> list[np.ndarray]:
    """Cartoon-like clip whose colour palette and motion differ by class.

    Sensitive clips: warm palette, scene panning right, sprite moving right fast.
    Non-sensitive clips: cool palette, scene panning down, sprite drifting down.
    """
    rng = np.random.default_rng(seed)
    w, h = size
    pan = (4, 0) if sensitive else (0, 4)
    vx, vy = (8, 0) if sensitive else (0, 2)
    base = np.array([200, 60, 50] if sensitive else [50, 90, 200], dtype=np.float32)
    bg = np.clip(base + rng.normal(0, 12, size=3), 0, 255)
    scene = [f.astype(np.float32) for f in translating_frames(n_frames, pan, size, seed)]
    sprite = textured_canvas(32, 32, seed + 1, blur=1.0)
    x, y = int(rng.integers(0, w // 3)), int(rng.integers(0, h // 3))
    frames = []
    for k in range(n_frames):
        img = np.clip(0.5 * bg + 0.5 * scene[k], 0, 255)
        sx = (x + k * vx) % (w - 32)
        sy = (y + k * vy) % (h - 32)
        img[sy : sy + 32, sx : sx + 32] = sprite
        frames.append(img.astype(np.uint8))
    return frames


def write_corrupt_file(path) -> Path:
    path = Path(path)
    path.write_bytes(b"\x00\x00\x00\x18ftypmp42" + bytes(range(256)) * 4)
    return path


def write_class_dataset(
    out_dir,
    n_per_class: int,
    n_frames: int = 20,
    fps: int = 10,
    codec: str = "mpeg4",
    split: str | None = None,
    prefix: str = "vid",
    seed: int = 0,
) -> list[dict]:
    """Encode ``n_per_class`` clips of each class; returns manifest rows (paths relative to ``out_dir``)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(2 * n_per_class):
        sensitive = k % 2 == 0
        vid = f"{prefix}{k:03d}"
        write_video(out_dir / f"{vid}.mp4", class_video_frames(sensitive, n_frames, seed=seed + k), fps=fps, codec=codec)
        row = {"id": vid, "path": f"{vid}.mp4", "label": "sensitive" if sensitive else "non_sensitive"}
        if split:
            row["split"] = split
        rows.append(row)
    return rows


def write_manifest_rows(rows: Iterable[dict], path) -> Path:
    path = Path(path)
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path
