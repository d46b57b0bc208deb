import json
from pathlib import Path

import numpy as np
import pytest

from cartoon_screen import synthetic
from cartoon_screen.features import shipped_descriptor


@pytest.fixture(scope="session")
def media(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("media")


@pytest.fixture(scope="session")
def shift8_video(media):
    return synthetic.write_translating_video(media / "shift8.mp4", (8, 0), n_frames=12)


@pytest.fixture(scope="session")
def static_video(media):
    return synthetic.write_translating_video(media / "static.mp4", (0, 0), n_frames=12)


@pytest.fixture(scope="session")
def intra_video(media):
    return synthetic.write_translating_video(media / "intra.mp4", (4, 0), n_frames=12, intra_only=True)


@pytest.fixture(scope="session")
def bframe_video(media):
    return synthetic.write_translating_video(media / "bframes.mp4", (4, 0), n_frames=16, codec="libx264", bframes=2)


@pytest.fixture(scope="session")
def class_rows(media):
    """12 short labelled clips (6 per class), manifest rows relative to ``media / 'cls'``."""
    return synthetic.write_class_dataset(media / "cls", n_per_class=6, n_frames=20)


@pytest.fixture
def manifest_dir(tmp_path, media, class_rows):
    """Fresh directory holding a manifest that points at the shared class clips."""

    def make(rows, name="manifest.jsonl"):
        out = []
        for r in rows:
            r = dict(r)
            p = Path(r["path"])
            if not p.is_absolute():
                r["path"] = str(media / "cls" / p)
            out.append(r)
        return synthetic.write_manifest_rows(out, tmp_path / name)

    return make


def write_stub_descriptor(path, name, **options):
    d = shipped_descriptor("stub").to_dict()
    d["name"] = name
    d["options"] = {"seed": 0, **options}
    Path(path).write_text(json.dumps(d), encoding="utf-8")
    return Path(path)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
