"""Per-stream calibrated linear SVMs and mean-probability late fusion."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import LinearSVC

from .cache import write_atomic
from .errors import TrainingError
from .features import PooledFeature
from .ingest import Label, Stream

MODEL_FORMAT = "cartoon-screen-svm"
MODEL_VERSION = 1
# Calibration slope is kept at or below -MIN_SLOPE so probability stays strictly increasing in the margin.
MIN_SLOPE = 1e-6
DEFAULT_THRESHOLD = 0.5


@dataclass
class LinearSvmModel:
    weights: np.ndarray
    bias: float
    calib_a: float
    calib_b: float
    class_weight_pos: float
    class_weight_neg: float
    c_param: float
    stream: Stream
    descriptor_name: str
    seed: int = 0
    train_accuracy: float | None = None

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "dim": self.dim,
            "weights": [float(v) for v in self.weights],
            "bias": float(self.bias),
            "calib_a": float(self.calib_a),
            "calib_b": float(self.calib_b),
            "class_weight_pos": float(self.class_weight_pos),
            "class_weight_neg": float(self.class_weight_neg),
            "c_param": float(self.c_param),
            "stream": self.stream.value,
            "descriptor_name": self.descriptor_name,
            "seed": int(self.seed),
            "train_accuracy": self.train_accuracy,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "LinearSvmModel":
        if obj.get("format") != MODEL_FORMAT:
            raise TrainingError("not a cartoon-screen SVM model file")
        if obj.get("version") != MODEL_VERSION:
            raise TrainingError(f"unsupported model version {obj.get('version')}")
        weights = np.array(obj["weights"], dtype=np.float64)
        if weights.shape != (obj["dim"],):
            raise TrainingError("weight vector length does not match dim")
        return cls(
            weights=weights,
            bias=obj["bias"],
            calib_a=obj["calib_a"],
            calib_b=obj["calib_b"],
            class_weight_pos=obj["class_weight_pos"],
            class_weight_neg=obj["class_weight_neg"],
            c_param=obj["c_param"],
            stream=Stream(obj["stream"]),
            descriptor_name=obj["descriptor_name"],
            seed=obj.get("seed", 0),
            train_accuracy=obj.get("train_accuracy"),
        )


def save_model(model: LinearSvmModel, path) -> Path:
    """JSON text; float repr round-trips exactly and key order is fixed."""
    text = json.dumps(model.to_dict(), sort_keys=True, indent=1) + "\n"
    return write_atomic(path, text.encode("utf-8"))


def load_model(path) -> LinearSvmModel:
    return LinearSvmModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def class_weights(labels: Sequence[Label]) -> tuple[float, float]:
    """Inverse-frequency weights (positive, negative), majority class at 1.0."""
    n_pos = sum(1 for y in labels if Label(y) is Label.SENSITIVE)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("training data must contain both classes")
    top = max(n_pos, n_neg)
    return top / n_pos, top / n_neg


def _signs(labels) -> np.ndarray:
    return np.array([1 if Label(y) is Label.SENSITIVE else -1 for y in labels], dtype=np.int64)


def _fit_linear(x, y, c_param, w_pos, w_neg, seed):
    svc = LinearSVC(
        C=c_param,
        loss="hinge",
        dual=True,
        class_weight={1: w_pos, -1: w_neg},
        random_state=seed,
        tol=1e-6,
        max_iter=200_000,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        svc.fit(x, y)
    return svc.coef_[0].astype(np.float64), float(svc.intercept_[0])


def fit_platt(margins: np.ndarray, y: np.ndarray, max_iter: int = 100) -> tuple[float, float]:
    """Sigmoid P(y=1|m) = 1 / (1 + exp(a*m + b)) by regularized-target Newton iterations.

    Targets are Platt's smoothed priors; the Newton step with backtracking line
    search follows Lin, Lin & Weng (2007).
    """
    m = np.asarray(margins, dtype=np.float64)
    pos = np.asarray(y) > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    t = np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def objective(a, b):
        z = a * m + b
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-np.abs(z))), (t - 1) * z + np.log1p(np.exp(-np.abs(z))))))

    a, b = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = objective(a, b)
    sigma, min_step = 1e-12, 1e-10
    for _ in range(max_iter):
        z = a * m + b
        p = expit(-z)  # P(y=1)
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + np.dot(m * m, d2)
        h22 = sigma + d2.sum()
        h21 = np.dot(m, d2)
        d1 = t - p
        g1 = np.dot(m, d1)
        g2 = d1.sum()
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            na, nb = a + step * da, b + step * db
            nf = objective(na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        if step < min_step:
            break
    return float(a), float(b)


def stratified_folds(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold index per sample; each class is shuffled then dealt round-robin."""
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    offset = 0
    for cls in (1, -1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    return folds


def _feature_matrix(features: Sequence[PooledFeature]) -> np.ndarray:
    dims = {f.dim for f in features}
    if len(dims) != 1:
        raise TrainingError(f"mixed feature dimensions {sorted(dims)}")
    return np.stack([f.values for f in features]).astype(np.float64)


def train_svm(
    features: Sequence[PooledFeature],
    labels: Sequence[Label],
    c_param: float = 1.0,
    seed: int = 0,
    calib_folds: int = 5,
    descriptor_name: str = "",
) -> LinearSvmModel:
    """Class-weighted linear SVM, then Platt calibration on out-of-fold margins.

    Calibration margins come from ``calib_folds``-fold stratified internal
    cross-validation (fewer folds if a class is rarer); with fewer than two
    examples in some class the in-sample margins are used instead.
    """
    if len(features) != len(labels):
        raise TrainingError("features and labels differ in length")
    if not features:
        raise TrainingError("no training examples")
    if c_param <= 0:
        raise TrainingError("c_param must be positive")
    x = _feature_matrix(features)
    y = _signs(labels)
    w_pos, w_neg = class_weights(labels)
    streams = {f.source_stream for f in features}
    if len(streams) != 1:
        raise TrainingError("features from more than one stream")

    weights, bias = _fit_linear(x, y, c_param, w_pos, w_neg, seed)

    k = min(calib_folds, int((y == 1).sum()), int((y == -1).sum()))
    if k >= 2:
        folds = stratified_folds(y, k, seed)
        margins = np.empty(len(y))
        for f in range(k):
            test = folds == f
            w_f, b_f = _fit_linear(x[~test], y[~test], c_param, w_pos, w_neg, seed)
            margins[test] = x[test] @ w_f + b_f
    else:
        margins = x @ weights + bias
    a, b = fit_platt(margins, y)
    a = min(a, -MIN_SLOPE)

    train_margin = x @ weights + bias
    pred = np.where(train_margin >= 0, 1, -1)
    tpr = float(np.mean(pred[y == 1] == 1))
    tnr = float(np.mean(pred[y == -1] == -1))
    return LinearSvmModel(
        weights=weights,
        bias=bias,
        calib_a=a,
        calib_b=b,
        class_weight_pos=w_pos,
        class_weight_neg=w_neg,
        c_param=float(c_param),
        stream=streams.pop(),
        descriptor_name=descriptor_name,
        seed=seed,
        train_accuracy=(tpr + tnr) / 2,
    )


def margin(model: LinearSvmModel, feature: PooledFeature | np.ndarray) -> float:
    values = feature.values if isinstance(feature, PooledFeature) else np.asarray(feature)
    if values.shape != (model.dim,):
        raise TrainingError(f"feature dim {values.shape} does not match model dim {model.dim}")
    return float(np.dot(model.weights, values.astype(np.float64)) + model.bias)


def sigmoid_probability(m: float, a: float, b: float) -> float:
    return float(expit(-(a * m + b)))


def predict_proba(model: LinearSvmModel, feature: PooledFeature | np.ndarray) -> float:
    """Calibrated probability of the sensitive class."""
    return sigmoid_probability(margin(model, feature), model.calib_a, model.calib_b)


def late_fuse(p_static: float | None, p_motion: float | None) -> float:
    """Mean of the stream probabilities; a lone available stream passes through."""
    present = [p for p in (p_static, p_motion) if p is not None]
    if not present:
        raise ValueError("late_fuse needs at least one stream probability")
    for p in present:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability out of range: {p}")
    if len(present) == 1:
        return float(present[0])
    return float((present[0] + present[1]) / 2)


def decide(p_fused: float, threshold: float = DEFAULT_THRESHOLD) -> Label:
    """Sensitive iff p_fused >= threshold (ties are flagged as sensitive)."""
    return Label.SENSITIVE if p_fused >= threshold else Label.NON_SENSITIVE


SINGLE_STREAM = "single-stream"


@dataclass
class ScoredPrediction:
    video_id: str
    p_static: float | None
    p_motion: float | None
    p_fused: float
    decided_label: Label
    threshold: float
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "id": self.video_id,
            "p_static": self.p_static,
            "p_motion": self.p_motion,
            "p_fused": self.p_fused,
            "label": self.decided_label.value,
            "flags": list(self.flags),
        }


def score_video(video_id: str, p_static, p_motion, threshold: float = DEFAULT_THRESHOLD) -> ScoredPrediction:
    fused = late_fuse(p_static, p_motion)
    flags = [SINGLE_STREAM] if (p_static is None) != (p_motion is None) else []
    return ScoredPrediction(video_id, p_static, p_motion, fused, decide(fused, threshold), threshold, flags)


def write_predictions(predictions: Sequence[ScoredPrediction], path) -> Path:
    text = "".join(json.dumps(p.to_json()) + "\n" for p in predictions)
    return write_atomic(path, text.encode("utf-8"))
