"""Model descriptors, feature extraction over InputTensors and per-video pooling."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, FeatureError
from .ingest import INPUT_SIDE, InputTensor, Stream


class Provenance(str, Enum):
    IMAGENET_PRETRAINED = "imagenet_pretrained"
    ELSAGATE_FINETUNED = "elsagate_finetuned"
    PORNOGRAPHY_PRETRAINED = "pornography_pretrained"


@dataclass(frozen=True)
class ModelDescriptor:
    name: str
    backend: str
    architecture: str
    feature_layer: str
    feature_dim: int
    weights_path: Path | None = None
    input_side: int = INPUT_SIDE
    channel_means: tuple[float, float, float] = (0.0, 0.0, 0.0)
    channel_scales: tuple[float, float, float] = (1.0, 1.0, 1.0)
    provenance: Provenance = Provenance.IMAGENET_PRETRAINED
    options: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.input_side != INPUT_SIDE:
            raise ConfigurationError(f"{self.name}: input_side must be {INPUT_SIDE}, got {self.input_side}")
        if self.feature_dim <= 0:
            raise ConfigurationError(f"{self.name}: feature_dim must be positive")
        if len(self.channel_means) != 3 or len(self.channel_scales) != 3:
            raise ConfigurationError(f"{self.name}: need 3 channel means and 3 channel scales")
        if any(s == 0 for s in self.channel_scales):
            raise ConfigurationError(f"{self.name}: channel scales must be non-zero")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights_path"] = str(self.weights_path) if self.weights_path else None
        d["provenance"] = self.provenance.value
        d["channel_means"] = list(self.channel_means)
        d["channel_scales"] = list(self.channel_scales)
        return d


def descriptor_from_dict(obj: dict, base_dir: Path | None = None) -> ModelDescriptor:
    obj = dict(obj)
    wp = obj.pop("weights_path", None)
    if wp:
        wp = Path(os.path.expanduser(wp))
        if not wp.is_absolute() and base_dir is not None:
            wp = base_dir / wp
    try:
        return ModelDescriptor(
            name=obj.pop("name"),
            backend=obj.pop("backend"),
            architecture=obj.pop("architecture"),
            feature_layer=obj.pop("feature_layer"),
            feature_dim=int(obj.pop("feature_dim")),
            weights_path=wp or None,
            input_side=int(obj.pop("input_side", INPUT_SIDE)),
            channel_means=tuple(float(v) for v in obj.pop("channel_means", (0, 0, 0))),
            channel_scales=tuple(float(v) for v in obj.pop("channel_scales", (1, 1, 1))),
            provenance=Provenance(obj.pop("provenance", Provenance.IMAGENET_PRETRAINED.value)),
            options=obj.pop("options", {}),
        )
    except KeyError as exc:
        raise ConfigurationError(f"descriptor missing field {exc}") from None
    except ValueError as exc:
        raise ConfigurationError(f"bad descriptor: {exc}") from None


def load_descriptor(path: str | os.PathLike) -> ModelDescriptor:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read descriptor {path}: {exc}") from None
    return descriptor_from_dict(obj, path.parent)


SHIPPED = ("googlenet", "squeezenet_2class", "mobilenet_v2", "nasnet_a_mobile", "stub")


def shipped_descriptor(name: str, weights_path=None) -> ModelDescriptor:
    """One of the descriptors bundled with the package, optionally with weights."""
    if name not in SHIPPED:
        raise ConfigurationError(f"unknown shipped descriptor {name!r}; choose from {SHIPPED}")
    text = resources.files("cartoon_screen.descriptors").joinpath(f"{name}.json").read_text(encoding="utf-8")
    obj = json.loads(text)
    if weights_path is not None:
        obj["weights_path"] = str(weights_path)
    return descriptor_from_dict(obj)


def weights_digest(model: ModelDescriptor) -> str:
    """sha256 of the weights file; descriptor-only backends hash their canonical JSON."""
    h = hashlib.sha256()
    if model.weights_path is not None and Path(model.weights_path).is_file():
        with open(model.weights_path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    else:
        d = model.to_dict()
        d.pop("weights_path")
        h.update(json.dumps(d, sort_keys=True).encode())
    return h.hexdigest()


@dataclass
class FeatureVector:
    values: np.ndarray
    source_stream: Stream
    frame_timestamp_s: float = 0.0

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass
class PooledFeature:
    video_id: str
    values: np.ndarray
    source_stream: Stream
    n_frames: int

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def stack_tensors(tensors: Sequence[InputTensor]) -> np.ndarray:
    return np.stack([t.values for t in tensors]).astype(np.float32, copy=False)


def extract_features(
    tensors: Sequence[InputTensor],
    model: ModelDescriptor,
    backend=None,
    batch_size: int = 16,
) -> list[FeatureVector]:
    """Run the backend over the tensors in batches; one vector per tensor."""
    from .backends import get_backend

    if backend is None:
        backend = get_backend(model)
    if not tensors:
        return []
    out: list[FeatureVector] = []
    for start in range(0, len(tensors), batch_size):
        chunk = tensors[start : start + batch_size]
        feats = backend.run_batch(stack_tensors(chunk))
        if feats.shape != (len(chunk), model.feature_dim):
            raise ConfigurationError(
                f"{model.name}: backend returned {feats.shape}, expected ({len(chunk)}, {model.feature_dim})"
            )
        if not np.all(np.isfinite(feats)):
            raise FeatureError(f"{model.name}: non-finite features")
        for t, row in zip(chunk, feats):
            out.append(FeatureVector(np.asarray(row, dtype=np.float32), t.stream, t.timestamp_s))
    return out


def pool_features(frames: Sequence[FeatureVector], video_id: str = "") -> PooledFeature:
    """Element-wise arithmetic mean over the frames of one video and stream."""
    if not frames:
        raise FeatureError("video produced no features")
    dims = {f.dim for f in frames}
    if len(dims) != 1:
        raise FeatureError(f"mixed feature dimensions {sorted(dims)}")
    streams = {f.source_stream for f in frames}
    if len(streams) != 1:
        raise FeatureError("mixed source streams in one pooling call")
    mat = np.stack([f.values for f in frames]).astype(np.float64)
    return PooledFeature(video_id, mat.mean(axis=0).astype(np.float32), frames[0].source_stream, len(frames))
