import logging
import math

import av
import cv2
import numpy as np
import pytest

from cartoon_screen import synthetic
from cartoon_screen.errors import NoMotionDataError
from cartoon_screen.ingest import FrameImage, Label, Stream, VideoRecord
from cartoon_screen.motion import (
    MID_INTENSITY,
    MotionVector,
    MotionVectorField,
    axis_intensity,
    dump_field_png,
    estimate_motion_exhaustive,
    extract_motion_vectors,
    field_from_side_data,
    is_intra_only,
    iter_motion_fields,
    magnitude_intensity,
    rasterize_field,
    render_field,
)


def _rec(path):
    return VideoRecord(path.stem, path, Label.SENSITIVE)


def _interior(fld, margin=24):
    return [
        v
        for v in fld.vectors
        if v.cur_x >= margin and v.cur_y >= margin and v.cur_x + v.block_w <= fld.frame_w - margin and v.cur_y + v.block_h <= fld.frame_h - margin
    ]


# -- exhaustive oracle ------------------------------------------------------


def _shift_pair(shift, size=(96, 80)):
    frames = synthetic.translating_frames(2, shift, size=size, seed=7)
    return FrameImage(frames[0]), FrameImage(frames[1])


def test_oracle_shift_plus4():
    ref, cur = _shift_pair((4, 0))
    fld = estimate_motion_exhaustive(ref, cur, block=8, search_radius=8)
    inner = _interior(fld, margin=8)
    assert inner and all((v.dx, v.dy) == (4.0, 0.0) for v in inner)
    # offset added to the reference position gives the current position
    v = inner[0]
    assert (v.block_x + v.dx, v.block_y + v.dy) == (v.cur_x, v.cur_y)


@pytest.mark.parametrize("shift", [(-8, 0), (0, 4), (3, -5)])
def test_oracle_other_shifts(shift):
    ref, cur = _shift_pair(shift)
    fld = estimate_motion_exhaustive(ref, cur, block=16, search_radius=8)
    assert all((v.dx, v.dy) == shift for v in _interior(fld, margin=16))


def test_oracle_identity():
    ref, _ = _shift_pair((0, 0))
    fld = estimate_motion_exhaustive(ref, ref, block=8, search_radius=4)
    assert len(fld.vectors) == (80 // 8) * (96 // 8)
    assert all((v.dx, v.dy) == (0.0, 0.0) for v in fld.vectors)


def test_oracle_uniform_tie_break():
    img = FrameImage(np.full((64, 64, 3), 90, dtype=np.uint8))
    fld = estimate_motion_exhaustive(img, img, block=16, search_radius=8)
    assert all((v.dx, v.dy) == (0.0, 0.0) for v in fld.vectors)


def _brute_force(ref, cur, bx, by, block, radius):
    """Plain-loop SAD search for one block, same tie order as the implementation."""
    h, w = ref.shape[:2]
    best = None
    cands = sorted(
        [(dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)],
        key=lambda o: (abs(o[0]) + abs(o[1]), o[1], o[0]),
    )
    blk = cur[by : by + block, bx : bx + block].astype(np.int64)
    for dx, dy in cands:
        sx, sy = bx - dx, by - dy
        if sx < 0 or sy < 0 or sx + block > w or sy + block > h:
            continue
        sad = int(np.abs(ref[sy : sy + block, sx : sx + block].astype(np.int64) - blk).sum())
        if best is None or sad < best[0]:
            best = (sad, dx, dy)
    return best[1], best[2]


def test_oracle_matches_brute_force_on_noise():
    rng = np.random.default_rng(1)
    ref = rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint8)
    cur = rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint8)
    fld = estimate_motion_exhaustive(FrameImage(ref), FrameImage(cur), block=16, search_radius=3)
    for v in fld.vectors:
        assert (v.dx, v.dy) == _brute_force(ref, cur, int(v.cur_x), int(v.cur_y), 16, 3)


def test_oracle_size_mismatch():
    a = FrameImage(np.zeros((32, 32, 3), dtype=np.uint8))
    b = FrameImage(np.zeros((32, 48, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        estimate_motion_exhaustive(a, b)


# -- codec extraction ---------------------------------------------------------


def test_codec_vectors_shift8(shift8_video):
    fields = extract_motion_vectors(_rec(shift8_video))
    assert len(fields) == 2  # 12 frames at 10 fps -> grid 0, 1
    fld = fields[0]
    assert fld.frame_index > 0 and fld.vectors
    assert fld.modal_vector() == (8.0, 0.0)
    inner = _interior(fld)
    good = sum(1 for v in inner if abs(v.dx - 8) <= 1 and abs(v.dy) <= 1)
    assert good / len(inner) >= 0.9


def test_codec_static_scene(static_video):
    for fld in extract_motion_vectors(_rec(static_video)):
        assert all((v.dx, v.dy) == (0.0, 0.0) for v in fld.vectors)


def test_codec_intra_only(intra_video, caplog):
    with caplog.at_level(logging.WARNING):
        fields = extract_motion_vectors(_rec(intra_video))
    assert fields and all(not f.vectors for f in fields)
    assert is_intra_only(fields)
    assert "no inter-coded frames" in caplog.text


def test_codec_bframes_forward_convention(bframe_video):
    picts = set()
    moving = []
    for fld, pict, _ in iter_motion_fields(bframe_video):
        picts.add(pict)
        if fld.vectors:
            moving.append(fld.modal_vector())
    assert 3 in picts, "fixture should contain B-frames"
    # Backward-predicted vectors are negated, so every inter frame points along +x.
    # Magnitudes are per reference distance: P-frames behind a B-run span several frames.
    assert moving and all(m[1] == 0.0 and m[0] > 0 and m[0] % 4 == 0 for m in moving)
    assert (4.0, 0.0) in moving


def test_codec_without_motion_vectors(tmp_path):
    path = tmp_path / "mjpeg.avi"
    with av.open(str(path), "w") as out:
        s = out.add_stream("mjpeg", rate=10)
        s.width, s.height, s.pix_fmt = 64, 48, "yuvj420p"
        for img in synthetic.translating_frames(3, (2, 0), size=(64, 48)):
            for p in s.encode(av.VideoFrame.from_ndarray(img, format="rgb24")):
                out.mux(p)
        for p in s.encode():
            out.mux(p)
    with pytest.raises(NoMotionDataError, match="no compressed-domain motion data"):
        extract_motion_vectors(_rec(path))


def test_side_data_conversion():
    dtype = [
        ("source", "i4"), ("w", "u1"), ("h", "u1"), ("src_x", "i2"), ("src_y", "i2"),
        ("dst_x", "i2"), ("dst_y", "i2"), ("flags", "u8"), ("motion_x", "i4"), ("motion_y", "i4"), ("motion_scale", "u2"),
    ]  # fmt: skip
    arr = np.array(
        [
            # past reference: block centred (24, 8) predicted from 4 px to the left
            (-1, 16, 16, 20, 8, 24, 8, 0, -8, 0, 2),
            # same block, future reference pointing 4 px right -> negated, averaged
            (1, 16, 16, 28, 8, 24, 8, 0, 8, 0, 2),
            # tiny block is dropped
            (-1, 4, 4, 0, 0, 2, 2, 0, 0, 0, 2),
        ],
        dtype=dtype,
    )
    fld = field_from_side_data(arr, 1, 0.0, 64, 32)
    assert len(fld.vectors) == 1
    v = fld.vectors[0]
    assert (v.cur_x, v.cur_y, v.dx, v.dy) == (16, 0, 4.0, 0.0)


# -- rasterization ----------------------------------------------------------


def test_raster_zero_field():
    fld = MotionVectorField(0, 0.0, 64, 48, [MotionVector(0, 0, 0, 0)])
    t = rasterize_field(fld)
    assert t.stream is Stream.MOTION
    assert np.all(t.values[..., :2] == MID_INTENSITY) and np.all(t.values[..., 2] == 0)


def test_raster_max_dx():
    fld = MotionVectorField(0, 0.0, 64, 64, [MotionVector(0, 16, 32, 0)])
    img = render_field(fld)
    blk = img[16:32, 32:48]
    assert np.all(blk[..., 0] == 255.0) and np.all(blk[..., 1] == 127.5)
    assert np.all(img[:16, :, 0] == MID_INTENSITY)


def test_raster_min_diagonal():
    fld = MotionVectorField(0, 0.0, 64, 64, [MotionVector(40, 40, -32, -32)])
    px = render_field(fld)[8, 8]
    assert px[0] == 0.0 and px[1] == 0.0 and px[2] == 255.0


def test_raster_clamps_and_symmetry():
    assert axis_intensity(100) == 255.0 and axis_intensity(-100) == 0.0
    for d in np.linspace(-40, 40, 33):
        assert axis_intensity(d) + axis_intensity(-d) == pytest.approx(255.0)
        assert magnitude_intensity(d, 3) == magnitude_intensity(-d, -3)
    assert magnitude_intensity(32, 32) == pytest.approx(255.0)
    assert magnitude_intensity(16, 0) == pytest.approx(16 / (32 * math.sqrt(2)) * 255)


def test_dump_png(tmp_path):
    fld = MotionVectorField(0, 0.0, 32, 32, [MotionVector(-32, 0, 32, 0)])
    path = dump_field_png(fld, tmp_path / "f.png")
    img = cv2.imread(str(path))[..., ::-1]
    assert img.shape == (32, 32, 3) and tuple(img[4, 4]) == (255, 128, 180)
