"""Metrics, the 1x2-fold protocol and report assembly.

The positive class is always ``sensitive``.
"""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classify import DEFAULT_THRESHOLD, ScoredPrediction, decide, predict_proba, score_video, train_svm
from .errors import TrainingError, UndefinedMetricError
from .features import PooledFeature
from .ingest import Label, Stream, VideoRecord


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def count(predicted: Sequence[Label], truth: Sequence[Label]) -> ConfusionCounts:
    if len(predicted) != len(truth):
        raise ValueError("predicted and truth differ in length")
    tp = fp = tn = fn = 0
    for p, t in zip(predicted, truth):
        p_pos, t_pos = Label(p).positive, Label(t).positive
        if p_pos and t_pos:
            tp += 1
        elif p_pos:
            fp += 1
        elif t_pos:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def confusion(predictions: Sequence[ScoredPrediction], truth) -> ConfusionCounts:
    """Confusion of decided labels against truth.

    ``truth`` is either a mapping video id -> label covering exactly the
    predicted ids, or a label sequence aligned with ``predictions``.
    """
    if isinstance(truth, Mapping):
        ids = [p.video_id for p in predictions]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate video ids in predictions")
        if set(ids) != set(truth):
            missing = sorted(set(truth) - set(ids))[:5]
            extra = sorted(set(ids) - set(truth))[:5]
            raise ValueError(f"prediction/truth id mismatch: missing {missing}, unexpected {extra}")
        gold = [truth[i] for i in ids]
    else:
        gold = list(truth)
        if len(gold) != len(predictions):
            raise ValueError("predictions and truth differ in length")
    return count([p.decided_label for p in predictions], gold)


def normalized_accuracy(c: ConfusionCounts) -> float:
    """(TPR + TNR) / 2."""
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise UndefinedMetricError("undefined rate: a class is absent from the ground truth")
    return (c.tp / (c.tp + c.fn) + c.tn / (c.tn + c.fp)) / 2


def f_beta(c: ConfusionCounts, beta: float = 2.0) -> float:
    """(1 + b^2) * P * R / (b^2 * P + R); zero when there is no true positive."""
    if c.tp + c.fp == 0 and c.tp + c.fn == 0:
        raise UndefinedMetricError("F undefined: no positive ground truth and no positive predictions")
    if c.tp == 0:
        return 0.0
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    b2 = beta * beta
    return (1 + b2) * precision * recall / (b2 * precision + recall)


# ---------------------------------------------------------------------------
# 1x2-fold split
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    fold_a: tuple[str, ...]
    fold_b: tuple[str, ...]
    seed: int


def split_1x2(records: Sequence[VideoRecord], seed: int) -> FoldSplit:
    """Stratified random halves.

    Each class is shuffled, the classes are concatenated and ids are dealt
    alternately, so per-class and total fold sizes each differ by at most one.
    """
    by_class = {label: sorted(r.id for r in records if r.label is label) for label in Label}
    for label, ids in by_class.items():
        if len(ids) < 2:
            raise ValueError(f"too few records of class {label.value!r} for two folds (need 2, have {len(ids)})")
    rng = np.random.default_rng(seed)
    order: list[str] = []
    for label in (Label.SENSITIVE, Label.NON_SENSITIVE):
        ids = by_class[label]
        order.extend(ids[i] for i in rng.permutation(len(ids)))
    return FoldSplit(tuple(order[0::2]), tuple(order[1::2]), seed)


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------

STREAM_ROWS = ("static", "motion", "fused")
TABLE_NAMES = {"static": "Frames", "motion": "Motion Vectors", "fused": "Late Fusion"}
FOLD_AB, FOLD_BA, MEAN, HELDOUT = "fold_a->b", "fold_b->a", "mean", "heldout_test"
DEGENERATE_RULE = (
    "ACC needs both classes in the test ground truth and F2 needs a positive "
    "label or prediction; otherwise the metric is reported as null, never 0. "
    "F2 is 0 when there are no true positives."
)


@dataclass
class ReportRow:
    stream: str
    protocol: str
    acc: float | None
    f2: float | None
    confusion: ConfusionCounts

    def to_dict(self) -> dict:
        return {
            "stream": self.stream,
            "protocol": self.protocol,
            "acc": self.acc,
            "f2": self.f2,
            "confusion": self.confusion.to_dict(),
        }


@dataclass
class Analysis:
    tag: str
    train_ids: list[str]
    test_ids: list[str]
    predictions: list[ScoredPrediction] = field(default_factory=list)


@dataclass
class EvalReport:
    rows: list[ReportRow]
    seed: int
    analyses: list[Analysis] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def row(self, stream: str, protocol: str) -> ReportRow:
        for r in self.rows:
            if r.stream == stream and r.protocol == protocol:
                return r
        raise KeyError((stream, protocol))

    def to_json(self) -> dict:
        return {
            "schema": "cartoon-screen-report/1",
            "seed": self.seed,
            "degenerate_rule": DEGENERATE_RULE,
            "rows": [r.to_dict() for r in self.rows],
            "analyses": [
                {"tag": a.tag, "train_ids": list(a.train_ids), "test_ids": list(a.test_ids)} for a in self.analyses
            ],
            "notes": list(self.notes),
            "config": self.config,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        protocols = list(dict.fromkeys(r.protocol for r in self.rows))
        head = f"{'Features':<16}" + "".join(f"{p + ' ACC':>18}{p + ' F2':>18}" for p in protocols)
        lines = [head, "-" * len(head)]
        for stream in STREAM_ROWS:
            cells = []
            for p in protocols:
                try:
                    r = self.row(stream, p)
                except KeyError:
                    cells.append(f"{'-':>18}{'-':>18}")
                    continue
                cells.append(f"{_pct(r.acc):>18}{_pct(r.f2):>18}")
            lines.append(f"{TABLE_NAMES[stream]:<16}" + "".join(cells))
        return "\n".join(lines) + "\n"


def _pct(v):
    return "n/a" if v is None else f"{100 * v:.1f}"


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "seed", "rows", "analyses", "degenerate_rule"],
    "properties": {
        "schema": {"const": "cartoon-screen-report/1"},
        "seed": {"type": "integer"},
        "degenerate_rule": {"type": "string"},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["stream", "protocol", "acc", "f2", "confusion"],
                "properties": {
                    "stream": {"enum": list(STREAM_ROWS)},
                    "protocol": {"enum": [FOLD_AB, FOLD_BA, MEAN, HELDOUT]},
                    "acc": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                    "f2": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                    "confusion": {
                        "type": "object",
                        "required": ["tp", "fp", "tn", "fn"],
                        "properties": {k: {"type": "integer", "minimum": 0} for k in ("tp", "fp", "tn", "fn")},
                        "additionalProperties": False,
                    },
                },
                "additionalProperties": False,
            },
        },
        "analyses": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["tag", "train_ids", "test_ids"],
                "properties": {
                    "tag": {"type": "string"},
                    "train_ids": {"type": "array", "items": {"type": "string"}},
                    "test_ids": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "notes": {"type": "array", "items": {"type": "string"}},
        "config": {"type": "object"},
    },
}


def _safe(metric, c):
    try:
        return metric(c)
    except UndefinedMetricError:
        return None


@dataclass
class ProtocolConfig:
    c_param: float = 1.0
    threshold: float = DEFAULT_THRESHOLD
    seed: int = 0
    calib_folds: int = 5
    descriptor_names: dict = field(default_factory=dict)


def run_analysis(
    tag: str,
    train_ids: Sequence[str],
    test_ids: Sequence[str],
    features: Mapping[Stream, Mapping[str, PooledFeature]],
    labels: Mapping[str, Label],
    config: ProtocolConfig,
    notes: list[str] | None = None,
) -> tuple[Analysis, list[ReportRow]]:
    """Train both stream models on ``train_ids``, score ``test_ids``, build three rows."""
    notes = notes if notes is not None else []
    probs: dict[Stream, dict[str, float]] = {}
    for stream in (Stream.STATIC, Stream.MOTION):
        feats = features.get(stream, {})
        train = [i for i in train_ids if i in feats]
        if not train:
            notes.append(f"{tag}: no {stream.value} features in training fold")
            probs[stream] = {}
            continue
        model = train_svm(
            [feats[i] for i in train],
            [labels[i] for i in train],
            c_param=config.c_param,
            seed=config.seed,
            calib_folds=config.calib_folds,
            descriptor_name=config.descriptor_names.get(stream.value, ""),
        )
        probs[stream] = {i: predict_proba(model, feats[i]) for i in test_ids if i in feats}

    analysis = Analysis(tag, list(train_ids), list(test_ids))
    for vid in test_ids:
        ps, pm = probs[Stream.STATIC].get(vid), probs[Stream.MOTION].get(vid)
        if ps is None and pm is None:
            notes.append(f"{tag}: {vid} has no features in either stream, not scored")
            continue
        analysis.predictions.append(score_video(vid, ps, pm, config.threshold))

    rows = []
    for stream, key in (("static", Stream.STATIC), ("motion", Stream.MOTION), ("fused", None)):
        if key is None:
            pred = [p.decided_label for p in analysis.predictions]
            gold = [labels[p.video_id] for p in analysis.predictions]
        else:
            scored = probs[key]
            ids = [i for i in test_ids if i in scored]
            pred = [decide(scored[i], config.threshold) for i in ids]
            gold = [labels[i] for i in ids]
        c = count(pred, gold)
        rows.append(ReportRow(stream, tag, _safe(normalized_accuracy, c), _safe(f_beta, c), c))
    return analysis, rows


def _mean_rows(rows: list[ReportRow]) -> list[ReportRow]:
    out = []
    for stream in STREAM_ROWS:
        mine = [r for r in rows if r.stream == stream]
        accs = [r.acc for r in mine]
        f2s = [r.f2 for r in mine]
        total = ConfusionCounts()
        for r in mine:
            total = total + r.confusion
        out.append(
            ReportRow(
                stream,
                MEAN,
                None if None in accs else float(np.mean(accs)),
                None if None in f2s else float(np.mean(f2s)),
                total,
            )
        )
    return out


def run_protocol(
    split: FoldSplit,
    features: Mapping[Stream, Mapping[str, PooledFeature]],
    labels: Mapping[str, Label],
    config: ProtocolConfig | None = None,
) -> EvalReport:
    """Train on fold A / test on B, then the reverse; rows per stream plus their mean.

    The mean row holds the arithmetic mean of the two analyses' metrics and
    the summed confusion counts.
    """
    config = config or ProtocolConfig()
    notes: list[str] = []
    analyses, rows = [], []
    for tag, train, test in ((FOLD_AB, split.fold_a, split.fold_b), (FOLD_BA, split.fold_b, split.fold_a)):
        analysis, r = run_analysis(tag, train, test, features, labels, config, notes)
        analyses.append(analysis)
        rows.extend(r)
    rows.extend(_mean_rows(rows))
    return EvalReport(rows, split.seed, analyses, notes, _config_dict(config))


def run_heldout(
    train_ids: Sequence[str],
    test_ids: Sequence[str],
    features: Mapping[Stream, Mapping[str, PooledFeature]],
    labels: Mapping[str, Label],
    config: ProtocolConfig | None = None,
) -> EvalReport:
    config = config or ProtocolConfig()
    if not train_ids or not test_ids:
        raise TrainingError("held-out evaluation needs non-empty train and test splits")
    notes: list[str] = []
    analysis, rows = run_analysis(HELDOUT, train_ids, test_ids, features, labels, config, notes)
    return EvalReport(rows, config.seed, [analysis], notes, _config_dict(config))


def _config_dict(config: ProtocolConfig) -> dict:
    return {
        "c_param": config.c_param,
        "threshold": config.threshold,
        "seed": config.seed,
        "calib_folds": config.calib_folds,
        "descriptors": dict(config.descriptor_names),
    }
