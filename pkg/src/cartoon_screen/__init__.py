"""Detect disturbing cartoon videos from sampled frames and codec motion vectors."""

from .classify import LinearSvmModel, ScoredPrediction, decide, late_fuse, predict_proba, train_svm
from .errors import (
    ConfigurationError,
    FeatureError,
    ManifestError,
    NoMotionDataError,
    ScreenError,
    TrainingError,
    UndefinedMetricError,
    VideoDecodeError,
)
from .evaluate import ConfusionCounts, EvalReport, f_beta, normalized_accuracy, run_protocol, split_1x2
from .features import ModelDescriptor, extract_features, load_descriptor, pool_features, shipped_descriptor
from .ingest import Label, Split, Stream, VideoRecord, load_manifest, preprocess_frame, sample_frames
from .motion import estimate_motion_exhaustive, extract_motion_vectors, rasterize_field

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ConfusionCounts",
    "EvalReport",
    "FeatureError",
    "Label",
    "LinearSvmModel",
    "ManifestError",
    "ModelDescriptor",
    "NoMotionDataError",
    "ScoredPrediction",
    "ScreenError",
    "Split",
    "Stream",
    "TrainingError",
    "UndefinedMetricError",
    "VideoDecodeError",
    "VideoRecord",
    "decide",
    "estimate_motion_exhaustive",
    "extract_features",
    "extract_motion_vectors",
    "f_beta",
    "late_fuse",
    "load_descriptor",
    "load_manifest",
    "normalized_accuracy",
    "pool_features",
    "predict_proba",
    "preprocess_frame",
    "rasterize_field",
    "run_protocol",
    "sample_frames",
    "shipped_descriptor",
    "split_1x2",
    "train_svm",
]
