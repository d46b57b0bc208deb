"""End-to-end orchestration: extract -> cache -> train -> predict -> evaluate."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence
from urllib.parse import quote

import numpy as np

from . import cache as fcache
from .backends import InferenceBackend, get_backend
from .classify import LinearSvmModel, ScoredPrediction, load_model, predict_proba, save_model, score_video, train_svm, write_predictions
from .errors import ConfigurationError, NoMotionDataError, ScreenError, TrainingError
from .evaluate import EvalReport, ProtocolConfig, run_heldout, run_protocol, split_1x2
from .features import SHIPPED, ModelDescriptor, PooledFeature, extract_features, load_descriptor, pool_features, shipped_descriptor, weights_digest
from .ingest import Split, Stream, VideoRecord, load_manifest, preprocess_frame, probe, sample_frames
from .motion import dump_field_png, extract_motion_vectors, is_intra_only, rasterize_field

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    manifest_path: Path | None = None
    descriptor_static: str = "stub"
    descriptor_motion: str = "stub"
    cache_dir: Path = Path("cache")
    model_dir: Path | None = None
    svm_c: float = 1.0
    threshold: float = 0.5
    seed: int = 0
    sampling_fps: float = 1.0
    workers: int = 1
    calib_folds: int = 5
    dump_motion: Path | None = None

    def validate(self, need_manifest: bool = True) -> "PipelineConfig":
        if need_manifest:
            if self.manifest_path is None:
                raise ConfigurationError("no manifest given")
            if not Path(self.manifest_path).is_file():
                raise ConfigurationError(f"manifest not found: {self.manifest_path}")
        for ref in (self.descriptor_static, self.descriptor_motion):
            if ref not in SHIPPED and not Path(ref).is_file():
                raise ConfigurationError(f"descriptor not found: {ref}")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError("threshold must lie in [0, 1]")
        if self.sampling_fps <= 0:
            raise ConfigurationError("sampling_fps must be positive")
        if self.svm_c <= 0:
            raise ConfigurationError("svm_c must be positive")
        return self

    @property
    def models_path(self) -> Path:
        return Path(self.model_dir) if self.model_dir else Path(self.cache_dir) / "models"


_PATH_FIELDS = ("manifest_path", "cache_dir", "model_dir", "dump_motion")


def load_config(path, **overrides) -> PipelineConfig:
    """JSON config; relative paths resolve against the config file. ``None`` overrides are ignored."""
    obj: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        base = path.parent
        known = set(PipelineConfig.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        for key in _PATH_FIELDS + ("descriptor_static", "descriptor_motion"):
            val = obj.get(key)
            if val is None or (key.startswith("descriptor") and val in SHIPPED):
                continue
            p = Path(val)
            obj[key] = str(p if p.is_absolute() else base / p)
    obj.update({k: v for k, v in overrides.items() if v is not None})
    for key in _PATH_FIELDS:
        if obj.get(key) is not None:
            obj[key] = Path(obj[key])
    return PipelineConfig(**obj)


def resolve_descriptor(ref: str) -> ModelDescriptor:
    return shipped_descriptor(ref) if ref in SHIPPED else load_descriptor(ref)


@dataclass
class VideoOutcome:
    video_id: str
    cached: dict = field(default_factory=dict)  # stream -> path
    errors: dict = field(default_factory=dict)  # stream -> reason

    @property
    def ok(self) -> bool:
        return bool(self.cached)


@dataclass
class ExtractSummary:
    outcomes: list[VideoOutcome]
    inference_calls: int

    @property
    def n_ok(self) -> int:
        return sum(o.ok for o in self.outcomes)

    @property
    def n_failed(self) -> int:
        return len(self.outcomes) - self.n_ok

    def headline(self) -> str:
        return f"{self.n_ok} ok, {self.n_failed} failed"

    def to_json(self) -> dict:
        return {
            "ok": self.n_ok,
            "failed": self.n_failed,
            "inference_calls": self.inference_calls,
            "videos": [
                {"id": o.video_id, "cached": {k: str(v) for k, v in o.cached.items()}, "errors": dict(o.errors)}
                for o in self.outcomes
            ],
        }


class Pipeline:
    """Holds descriptors, lazily created backends and the feature cache."""

    def __init__(self, config: PipelineConfig, backend_factory: Callable[[ModelDescriptor], InferenceBackend] = get_backend):
        self.config = config
        self.descriptors = {
            Stream.STATIC: resolve_descriptor(config.descriptor_static),
            Stream.MOTION: resolve_descriptor(config.descriptor_motion),
        }
        self.digests = {s: weights_digest(d) for s, d in self.descriptors.items()}
        self._backend_factory = backend_factory
        self._backends: dict[tuple[str, str], InferenceBackend] = {}

    # -- backends and cache -------------------------------------------------

    def backend(self, stream: Stream) -> InferenceBackend:
        d = self.descriptors[stream]
        key = (d.name, self.digests[stream])
        if key not in self._backends:
            self._backends[key] = self._backend_factory(d)
        return self._backends[key]

    @property
    def inference_calls(self) -> int:
        return sum(b.calls for b in self._backends.values())

    def cache_file(self, video_id: str, stream: Stream) -> Path:
        d = self.descriptors[stream]
        return fcache.cache_path(self.config.cache_dir, video_id, stream.value, d.name, self.digests[stream])

    def marker_file(self, video_id: str, stream: Stream) -> Path:
        return self.cache_file(video_id, stream).with_suffix(".none")

    # -- extraction -------------------------------------------------------

    def _tensors(self, video: VideoRecord, stream: Stream):
        d = self.descriptors[stream]
        if stream is Stream.STATIC:
            return [preprocess_frame(f, d) for f in sample_frames(video, self.config.sampling_fps)]
        fields = extract_motion_vectors(video, self.config.sampling_fps)
        if is_intra_only(fields):
            raise NoMotionDataError(f"{video.path}: intra-only stream, no inter-coded frames")
        if self.config.dump_motion is not None:
            out = Path(self.config.dump_motion) / quote(video.id, safe="")
            out.mkdir(parents=True, exist_ok=True)
            for k, fld in enumerate(fields):
                dump_field_png(fld, out / f"{k:04d}.png")
        return [rasterize_field(f, d) for f in fields]

    def extract_stream(self, video: VideoRecord, stream: Stream) -> Path:
        path = self.cache_file(video.id, stream)
        if path.exists():
            return path
        marker = self.marker_file(video.id, stream)
        try:
            tensors = self._tensors(video, stream)
            feats = extract_features(tensors, self.descriptors[stream], self.backend(stream))
            pooled = pool_features(feats, video.id)
        except ScreenError as exc:
            fcache.write_atomic(marker, str(exc).encode("utf-8"))
            raise
        fcache.write_cache(path, np.stack([f.values for f in feats]), pooled.values)
        if marker.exists():
            marker.unlink()
        return path

    def extract_video(self, video: VideoRecord) -> VideoOutcome:
        outcome = VideoOutcome(video.id)
        try:
            if video.duration_s is None and not all(self.cache_file(video.id, s).exists() for s in Stream):
                probe(video)
        except ScreenError as exc:
            for s in Stream:
                outcome.errors[s.value] = str(exc)
                fcache.write_atomic(self.marker_file(video.id, s), str(exc).encode("utf-8"))
            log.error("%s: %s", video.id, exc)
            return outcome
        for stream in Stream:
            try:
                outcome.cached[stream.value] = self.extract_stream(video, stream)
            except ScreenError as exc:
                outcome.errors[stream.value] = str(exc)
                log.warning("%s [%s]: %s", video.id, stream.value, exc)
        return outcome

    def extract(self, records: Sequence[VideoRecord]) -> ExtractSummary:
        if self.config.workers == 1:
            outcomes = [self.extract_video(r) for r in records]
        else:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                outcomes = list(pool.map(self.extract_video, records))
        return ExtractSummary(outcomes, self.inference_calls)

    # -- cached features --------------------------------------------------

    def load_features(self, records: Sequence[VideoRecord]):
        """Per stream: id -> PooledFeature; plus ids with neither a cache nor a failure marker."""
        feats: dict[Stream, dict[str, PooledFeature]] = {s: {} for s in Stream}
        missing: list[str] = []
        for r in records:
            for s in Stream:
                path = self.cache_file(r.id, s)
                if path.exists():
                    frames, pooled = fcache.read_cache(path)
                    feats[s][r.id] = PooledFeature(r.id, pooled, s, len(frames))
                elif not self.marker_file(r.id, s).exists():
                    missing.append(r.id)
        return feats, sorted(set(missing))

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(
            c_param=self.config.svm_c,
            threshold=self.config.threshold,
            seed=self.config.seed,
            calib_folds=self.config.calib_folds,
            descriptor_names={s.value: d.name for s, d in self.descriptors.items()},
        )


def training_records(records: Sequence[VideoRecord]) -> list[VideoRecord]:
    return [r for r in records if r.split is not Split.TEST]


MODEL_FILES = {Stream.STATIC: "static.svm.json", Stream.MOTION: "motion.svm.json"}


def cmd_extract(config: PipelineConfig, records=None, pipeline: Pipeline | None = None) -> ExtractSummary:
    config.validate(need_manifest=records is None)
    records = load_manifest(config.manifest_path) if records is None else records
    pipeline = pipeline or Pipeline(config)
    return pipeline.extract(records)


def cmd_train(config: PipelineConfig, records=None, pipeline: Pipeline | None = None) -> dict[Stream, Path]:
    config.validate(need_manifest=records is None)
    records = load_manifest(config.manifest_path) if records is None else records
    train = training_records(records)
    if not train:
        raise TrainingError("training split is empty")
    pipeline = pipeline or Pipeline(config)
    feats, missing = pipeline.load_features(train)
    if missing:
        raise TrainingError(f"missing feature caches for {len(missing)} videos: {', '.join(missing[:20])}")
    labels = {r.id: r.label for r in train}
    out: dict[Stream, Path] = {}
    for stream in Stream:
        ids = [r.id for r in train if r.id in feats[stream]]
        if not ids:
            raise TrainingError(f"no {stream.value} features in the training split")
        model = train_svm(
            [feats[stream][i] for i in ids],
            [labels[i] for i in ids],
            c_param=config.svm_c,
            seed=config.seed,
            calib_folds=config.calib_folds,
            descriptor_name=pipeline.descriptors[stream].name,
        )
        log.info("%s model: training ACC %.4f on %d videos", stream.value, model.train_accuracy, len(ids))
        out[stream] = save_model(model, config.models_path / MODEL_FILES[stream])
    return out


def load_models(config: PipelineConfig, pipeline: Pipeline) -> dict[Stream, LinearSvmModel]:
    models = {}
    for stream, name in MODEL_FILES.items():
        path = config.models_path / name
        if not path.exists():
            raise ConfigurationError(f"model file not found: {path}")
        model = load_model(path)
        expected = pipeline.descriptors[stream].name
        if model.descriptor_name != expected:
            raise ConfigurationError(
                f"{stream.value} model was trained on descriptor {model.descriptor_name!r}, config uses {expected!r}"
            )
        models[stream] = model
    return models


def cmd_predict(config: PipelineConfig, out_path, records=None, pipeline: Pipeline | None = None) -> list[ScoredPrediction]:
    config.validate(need_manifest=records is None)
    records = load_manifest(config.manifest_path) if records is None else records
    pipeline = pipeline or Pipeline(config)
    models = load_models(config, pipeline)
    pipeline.extract(records)
    feats, _ = pipeline.load_features(records)
    predictions = []
    for r in records:
        p = {s: predict_proba(models[s], feats[s][r.id]) if r.id in feats[s] else None for s in Stream}
        if p[Stream.STATIC] is None and p[Stream.MOTION] is None:
            log.error("%s: no features in either stream, no prediction", r.id)
            continue
        predictions.append(score_video(r.id, p[Stream.STATIC], p[Stream.MOTION], config.threshold))
    write_predictions(predictions, out_path)
    return predictions


def cmd_evaluate(config: PipelineConfig, protocol: str = "1x2", out_dir=None, records=None, pipeline: Pipeline | None = None) -> EvalReport:
    config.validate(need_manifest=records is None)
    records = load_manifest(config.manifest_path) if records is None else records
    pipeline = pipeline or Pipeline(config)
    if protocol == "1x2":
        pool = training_records(records)
        if not pool:
            raise TrainingError("no train/unassigned records for the 1x2 protocol")
        pipeline.extract(pool)
        feats, _ = pipeline.load_features(pool)
        usable = [r for r in pool if any(r.id in feats[s] for s in Stream)]
        split = split_1x2(usable, config.seed)
        report = run_protocol(split, feats, {r.id: r.label for r in usable}, pipeline.protocol_config())
    elif protocol == "heldout":
        train = [r for r in records if r.split is Split.TRAIN]
        test = [r for r in records if r.split is Split.TEST]
        if not train or not test:
            raise TrainingError("heldout protocol needs records tagged 'train' and 'test'")
        pipeline.extract(train + test)
        feats, _ = pipeline.load_features(train + test)
        have = lambda r: any(r.id in feats[s] for s in Stream)  # noqa: E731
        report = run_heldout(
            [r.id for r in train if have(r)],
            [r.id for r in test if have(r)],
            feats,
            {r.id: r.label for r in records},
            pipeline.protocol_config(),
        )
    else:
        raise ConfigurationError(f"unknown protocol {protocol!r}")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fcache.write_atomic(out_dir / "report.json", report.dumps().encode("utf-8"))
        fcache.write_atomic(out_dir / "report.txt", report.table().encode("utf-8"))
    return report


def cmd_probe(config: PipelineConfig) -> list[dict]:
    """Manifest validation plus per-video duration probe."""
    config.validate(need_manifest=True)
    out = []
    for r in load_manifest(config.manifest_path):
        row = {"id": r.id, "path": str(r.path), "label": r.label.value, "split": r.split.value}
        try:
            row["duration_s"] = probe(r).duration_s
        except ScreenError as exc:
            row["error"] = str(exc)
        out.append(row)
    return out
