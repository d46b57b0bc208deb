"""Compressed-domain motion vectors: extraction, block-matching oracle, rasterization.

Sign convention everywhere: a vector (dx, dy) moves a macroblock from its
reference-frame position (X, Y) to its current-frame position (X+dx, Y+dy).
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import av
import cv2
import numpy as np

from .errors import NoMotionDataError, VideoDecodeError
from .ingest import (
    FrameImage,
    InputTensor,
    Stream,
    VideoRecord,
    iter_decoded,
    normalize,
    probe,
    resize_and_crop,
    sampling_grid,
)

log = logging.getLogger(__name__)

CLAMP_RADIUS = 32.0
MIN_BLOCK = 8
# Decoders in FFmpeg that honour flags2=+export_mvs.
MV_CODECS = frozenset(
    {"h264", "mpeg4", "mpeg1video", "mpeg2video", "h263", "h263p", "msmpeg4v1", "msmpeg4v2", "msmpeg4v3", "flv", "wmv1", "wmv2"}
)
PICT_I, PICT_P, PICT_B = 1, 2, 3


@dataclass(frozen=True)
class MotionVector:
    block_x: float
    block_y: float
    dx: float
    dy: float
    block_w: int = 16
    block_h: int = 16

    @property
    def cur_x(self) -> float:
        return self.block_x + self.dx

    @property
    def cur_y(self) -> float:
        return self.block_y + self.dy


@dataclass
class MotionVectorField:
    frame_index: int
    timestamp_s: float
    frame_w: int
    frame_h: int
    vectors: list[MotionVector] = field(default_factory=list)

    def block_map(self) -> dict[tuple[int, int], MotionVector]:
        """Vectors keyed by the integer top-left of their current-frame block."""
        return {(int(round(v.cur_x)), int(round(v.cur_y))): v for v in self.vectors}

    def modal_vector(self) -> tuple[float, float] | None:
        if not self.vectors:
            return None
        counts: dict[tuple[float, float], int] = defaultdict(int)
        for v in self.vectors:
            counts[(v.dx, v.dy)] += 1
        return max(sorted(counts), key=lambda k: counts[k])


# ---------------------------------------------------------------------------
# codec-level extraction
# ---------------------------------------------------------------------------


def _codec_name(path) -> str:
    try:
        with av.open(str(path)) as container:
            if not container.streams.video:
                raise VideoDecodeError(f"{path}: no video stream")
            return container.streams.video[0].codec_context.name
    except av.FFmpegError as exc:
        raise VideoDecodeError(f"{path}: cannot open container ({exc})") from None


def field_from_side_data(mvs, frame_index: int, timestamp_s: float, frame_w: int, frame_h: int) -> MotionVectorField:
    """Convert FFmpeg AVMotionVector records to a forward-convention field.

    FFmpeg reports block centres (dst_x, dst_y) in the current frame and the
    prediction source at dst + motion/scale. Past-reference vectors give
    dx = dst - src; future-reference (backward) vectors are negated. Blocks
    predicted from both directions are averaged into one vector.
    """
    fld = MotionVectorField(frame_index, timestamp_s, frame_w, frame_h)
    if mvs is None:
        return fld
    arr = mvs.to_ndarray() if hasattr(mvs, "to_ndarray") else mvs
    if len(arr) == 0:
        return fld
    scale = arr["motion_scale"].astype(np.float64)
    scale[scale == 0] = 1.0
    off_x = arr["motion_x"] / scale
    off_y = arr["motion_y"] / scale
    sign = np.where(arr["source"] < 0, -1.0, 1.0)
    dx_all = sign * off_x
    dy_all = sign * off_y

    acc: dict[tuple[int, int, int, int], list[tuple[float, float]]] = defaultdict(list)
    for i in range(len(arr)):
        w, h = int(arr["w"][i]), int(arr["h"][i])
        x0 = int(arr["dst_x"][i]) - w // 2
        y0 = int(arr["dst_y"][i]) - h // 2
        x1, y1 = min(x0 + w, frame_w), min(y0 + h, frame_h)
        x0, y0 = max(x0, 0), max(y0, 0)
        if x1 - x0 < MIN_BLOCK or y1 - y0 < MIN_BLOCK:
            continue
        acc[(x0, y0, x1 - x0, y1 - y0)].append((float(dx_all[i]), float(dy_all[i])))

    for (x0, y0, w, h), offs in sorted(acc.items()):
        dx = sum(o[0] for o in offs) / len(offs)
        dy = sum(o[1] for o in offs) / len(offs)
        fld.vectors.append(MotionVector(x0 - dx, y0 - dy, dx, dy, w, h))
    return fld


def iter_motion_fields(path, with_pixels: bool = False):
    """Yield (field, pict_type, pixels-or-None) for every decoded frame.

    Raises NoMotionDataError if the stream's codec cannot export motion vectors.
    """
    codec = _codec_name(path)
    if codec not in MV_CODECS:
        raise NoMotionDataError(f"{path}: codec {codec!r} has no compressed-domain motion data")
    for idx, (t, frame) in enumerate(iter_decoded(path, {"flags2": "+export_mvs"})):
        pict = int(frame.pict_type)
        mvs = frame.side_data.get("MOTION_VECTORS") if pict != PICT_I else None
        fld = field_from_side_data(mvs, idx, t, frame.width, frame.height)
        pixels = frame.to_ndarray(format="rgb24") if with_pixels else None
        yield fld, pict, pixels


def extract_motion_vectors(video: VideoRecord, rate_fps: float = 1.0) -> list[MotionVectorField]:
    """One field per sampling timestamp, from the nearest inter-coded frame.

    Intra-only streams produce empty fields and a warning.
    """
    if video.duration_s is None:
        probe(video)
    grid = sampling_grid(video.duration_s, rate_fps)
    inter: list[MotionVectorField] = []
    size = None
    for fld, pict, _ in iter_motion_fields(video.path):
        size = (fld.frame_w, fld.frame_h)
        if pict in (PICT_P, PICT_B):
            inter.append(fld)
    if size is None:
        raise VideoDecodeError(f"{video.path}: no decodable frames")
    if not inter:
        log.warning("%s: no inter-coded frames, motion fields are empty", video.path)
        return [MotionVectorField(-1, t, size[0], size[1]) for t in grid]

    times = np.array([f.timestamp_s for f in inter])
    out = []
    for t in grid:
        # argmin returns the earliest index on ties
        src = inter[int(np.argmin(np.abs(times - t)))]
        out.append(MotionVectorField(src.frame_index, t, src.frame_w, src.frame_h, list(src.vectors)))
    return out


def is_intra_only(fields: list[MotionVectorField]) -> bool:
    return all(f.frame_index < 0 for f in fields)


# ---------------------------------------------------------------------------
# exhaustive block matching oracle
# ---------------------------------------------------------------------------


def _candidates(radius: int):
    offs = [(dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    return sorted(offs, key=lambda o: (abs(o[0]) + abs(o[1]), o[1], o[0]))


def estimate_motion_exhaustive(ref: FrameImage, cur: FrameImage, block: int = 16, search_radius: int = 8) -> MotionVectorField:
    """Full-search SAD block matching of ``cur`` against ``ref``.

    For every complete block of ``cur`` the offset within +-search_radius with
    minimum SAD (summed over RGB) wins; ties go to the smallest |dx|+|dy|,
    then smallest dy, then smallest dx. Candidate source blocks must lie
    fully inside ``ref``.
    """
    if ref.pixels.shape != cur.pixels.shape:
        raise ValueError(f"frame size mismatch: {ref.pixels.shape} vs {cur.pixels.shape}")
    h, w = cur.height, cur.width
    nby, nbx = h // block, w // block
    fld = MotionVectorField(0, cur.timestamp_s, w, h)
    if nby == 0 or nbx == 0:
        return fld
    r = search_radius
    # RGB rows viewed as single-channel rows of width 3*w; one integral image covers all channels
    cur_a = np.ascontiguousarray(cur.pixels[: nby * block, : nbx * block]).reshape(nby * block, nbx * block * 3)
    ref_p = cv2.copyMakeBorder(ref.pixels, r, r, r, r, cv2.BORDER_CONSTANT, value=0)
    ref_p = ref_p.reshape(ref_p.shape[0], ref_p.shape[1] * 3)
    ys = np.arange(nby) * block
    xs = np.arange(nbx) * block
    y_lo, y_hi = ys[:, None], ys[:, None] + block
    x_lo, x_hi = 3 * xs[None, :], 3 * (xs[None, :] + block)

    best_sad = np.full((nby, nbx), np.iinfo(np.int64).max, dtype=np.int64)
    best_dx = np.zeros((nby, nbx), dtype=np.int64)
    best_dy = np.zeros((nby, nbx), dtype=np.int64)
    for dx, dy in _candidates(r):
        # source block top-left in ref is (x - dx, y - dy)
        valid = ((ys - dy >= 0) & (ys - dy + block <= h))[:, None] & ((xs - dx >= 0) & (xs - dx + block <= w))[None, :]
        if not valid.any():
            continue
        src = ref_p[r - dy : r - dy + nby * block, 3 * (r - dx) : 3 * (r - dx + nbx * block)]
        integ = cv2.integral(cv2.absdiff(cur_a, src), sdepth=cv2.CV_32S)
        sad = integ[y_hi, x_hi] - integ[y_lo, x_hi] - integ[y_hi, x_lo] + integ[y_lo, x_lo]
        better = valid & (sad < best_sad)
        best_sad[better] = sad[better]
        best_dx[better] = dx
        best_dy[better] = dy

    for by in range(nby):
        for bx in range(nbx):
            dx, dy = int(best_dx[by, bx]), int(best_dy[by, bx])
            fld.vectors.append(MotionVector(float(xs[bx] - dx), float(ys[by] - dy), float(dx), float(dy), block, block))
    return fld


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

MAX_INTENSITY = 255.0
MID_INTENSITY = MAX_INTENSITY / 2


def axis_intensity(offset: float, radius: float = CLAMP_RADIUS) -> float:
    """Affine map [-R, +R] -> [0, 255], clamped."""
    o = min(max(offset, -radius), radius)
    return (o + radius) / (2 * radius) * MAX_INTENSITY


def magnitude_intensity(dx: float, dy: float, radius: float = CLAMP_RADIUS) -> float:
    """Affine map [0, R*sqrt(2)] -> [0, 255], clamped."""
    top = radius * math.sqrt(2)
    return min(math.hypot(dx, dy), top) / top * MAX_INTENSITY


def render_field(fld: MotionVectorField, radius: float = CLAMP_RADIUS) -> np.ndarray:
    """Dense float32 (frame_h, frame_w, 3) image: dx, dy, magnitude channels."""
    img = np.zeros((fld.frame_h, fld.frame_w, 3), dtype=np.float32)
    img[..., 0] = MID_INTENSITY
    img[..., 1] = MID_INTENSITY
    for v in fld.vectors:
        x0, y0 = int(round(v.cur_x)), int(round(v.cur_y))
        x1, y1 = min(x0 + v.block_w, fld.frame_w), min(y0 + v.block_h, fld.frame_h)
        x0, y0 = max(x0, 0), max(y0, 0)
        if x1 <= x0 or y1 <= y0:
            continue
        img[y0:y1, x0:x1] = (
            axis_intensity(v.dx, radius),
            axis_intensity(v.dy, radius),
            magnitude_intensity(v.dx, v.dy, radius),
        )
    return img


def rasterize_field(fld: MotionVectorField, model=None, radius: float = CLAMP_RADIUS) -> InputTensor:
    """Render a field and bring it to network input shape like a static frame."""
    cropped = resize_and_crop(render_field(fld, radius))
    values = cropped if model is None else normalize(cropped, model.channel_means, model.channel_scales)
    return InputTensor(np.ascontiguousarray(values, dtype=np.float32), Stream.MOTION, fld.timestamp_s)


def dump_field_png(fld: MotionVectorField, path, radius: float = CLAMP_RADIUS) -> Path:
    img = np.clip(np.rint(render_field(fld, radius)), 0, 255).astype(np.uint8)
    path = Path(path)
    cv2.imwrite(str(path), img[..., ::-1])
    return path
