import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cartoon_screen.classify import score_video
from cartoon_screen.errors import UndefinedMetricError
from cartoon_screen.evaluate import (
    FOLD_AB,
    FOLD_BA,
    HELDOUT,
    MEAN,
    REPORT_SCHEMA,
    ConfusionCounts,
    ProtocolConfig,
    confusion,
    count,
    f_beta,
    normalized_accuracy,
    run_heldout,
    run_protocol,
    split_1x2,
)
from cartoon_screen.features import PooledFeature
from cartoon_screen.ingest import Label, Stream, VideoRecord

POS, NEG = Label.SENSITIVE, Label.NON_SENSITIVE


def _records(n_pos, n_neg):
    return [VideoRecord(f"p{i:03d}", Path("x"), POS) for i in range(n_pos)] + [
        VideoRecord(f"n{i:03d}", Path("x"), NEG) for i in range(n_neg)
    ]


# -- confusion -----------------------------------------------------------------


def test_confusion_all_correct():
    truth = [POS] * 4 + [NEG] * 4
    preds = [score_video(str(i), 0.9 if y is POS else 0.1, None) for i, y in enumerate(truth)]
    assert confusion(preds, truth) == ConfusionCounts(tp=4, fp=0, tn=4, fn=0)


def test_confusion_all_sensitive():
    truth = [POS] * 4 + [NEG] * 4
    preds = [score_video(str(i), 0.9, 0.9) for i in range(8)]
    assert confusion(preds, truth) == ConfusionCounts(tp=4, fp=4, tn=0, fn=0)


def test_confusion_mixed_fixture():
    truth = {"a": POS, "b": POS, "c": POS, "d": POS, "e": NEG, "f": NEG, "g": NEG, "h": NEG, "i": NEG, "j": POS}
    p = {"a": 0.9, "b": 0.6, "c": 0.2, "d": 0.5, "e": 0.1, "f": 0.7, "g": 0.3, "h": 0.49, "i": 0.51, "j": 0.05}
    preds = [score_video(k, v, None) for k, v in p.items()]
    # hand count: tp = a, b, d; fn = c, j; fp = f, i; tn = e, g, h
    assert confusion(preds, truth) == ConfusionCounts(tp=3, fp=2, tn=3, fn=2)


def test_confusion_id_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        confusion([score_video("a", 0.9, None)], {"b": POS})


# -- metrics ---------------------------------------------------------------------


def test_normalized_accuracy_examples():
    assert normalized_accuracy(ConfusionCounts(tp=5, tn=5)) == 1.0
    assert normalized_accuracy(ConfusionCounts(tp=9, fn=1, tn=8, fp=2)) == pytest.approx(0.85, rel=1e-12)
    assert normalized_accuracy(ConfusionCounts(tp=9, fn=1, tn=4, fp=4)) == pytest.approx(0.70, rel=1e-12)


def test_normalized_accuracy_undefined():
    with pytest.raises(UndefinedMetricError, match="undefined rate"):
        normalized_accuracy(ConfusionCounts(tp=3, fn=1))
    with pytest.raises(UndefinedMetricError):
        normalized_accuracy(ConfusionCounts(tn=3, fp=1))


def test_f2_examples():
    # precision 0.5, recall 1.0
    assert f_beta(ConfusionCounts(tp=2, fp=2, fn=0)) == pytest.approx(5 * 0.5 / (4 * 0.5 + 1), rel=1e-12)
    # precision 1.0, recall 0.5
    assert f_beta(ConfusionCounts(tp=2, fp=0, fn=2)) == pytest.approx(5 * 0.5 / (4 * 1.0 + 0.5), rel=1e-12)
    assert f_beta(ConfusionCounts(tp=2, fp=0, fn=2)) == pytest.approx(0.5556, abs=1e-4)


def test_f_beta_degenerate():
    with pytest.raises(UndefinedMetricError, match="F undefined"):
        f_beta(ConfusionCounts(tn=5))
    assert f_beta(ConfusionCounts(fp=2, tn=3)) == 0.0
    assert f_beta(ConfusionCounts(fn=2, tn=3)) == 0.0


@given(st.integers(1, 200), st.integers(0, 200))
def test_f2_equal_precision_recall(tp, miss):
    # fp == fn makes precision == recall
    c = ConfusionCounts(tp=tp, fp=miss, fn=miss)
    assert f_beta(c) == pytest.approx(tp / (tp + miss), rel=1e-12)


@given(st.integers(1, 100), st.integers(0, 100), st.integers(0, 100))
def test_f1_is_harmonic_mean(tp, fp, fn):
    c = ConfusionCounts(tp=tp, fp=fp, fn=fn)
    p, r = tp / (tp + fp), tp / (tp + fn)
    assert f_beta(c, beta=1.0) == pytest.approx(2 * p * r / (p + r), rel=1e-12)


def test_count_length_mismatch():
    with pytest.raises(ValueError):
        count([POS], [POS, NEG])


# -- split --------------------------------------------------------------------------


def test_split_10_10():
    for seed in range(5):
        s = split_1x2(_records(10, 10), seed)
        for fold in (s.fold_a, s.fold_b):
            assert len(fold) == 10
            assert sum(i.startswith("p") for i in fold) == 5


def test_split_deterministic_and_seed_sensitive():
    recs = _records(10, 10)
    assert split_1x2(recs, 3) == split_1x2(list(reversed(recs)), 3)
    assert split_1x2(recs, 3) != split_1x2(recs, 4)


def test_split_7_5():
    s = split_1x2(_records(7, 5), 0)
    assert (len(s.fold_a), len(s.fold_b)) == (6, 6)
    for prefix in "pn":
        a = sum(i.startswith(prefix) for i in s.fold_a)
        b = sum(i.startswith(prefix) for i in s.fold_b)
        assert abs(a - b) <= 1


def test_split_too_small():
    with pytest.raises(ValueError, match="too few"):
        split_1x2(_records(1, 5), 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40), st.integers(0, 2**32 - 1))
def test_split_properties(n_pos, n_neg, seed):
    recs = _records(n_pos, n_neg)
    s = split_1x2(recs, seed)
    a, b = set(s.fold_a), set(s.fold_b)
    assert not a & b and a | b == {r.id for r in recs}
    assert abs(len(a) - len(b)) <= 1
    for prefix in "pn":
        assert abs(sum(i.startswith(prefix) for i in a) - sum(i.startswith(prefix) for i in b)) <= 1


# -- protocol -----------------------------------------------------------------------------


def _features(recs, seed=0, constant=None, dim=6):
    rng = np.random.default_rng(seed)
    out = {Stream.STATIC: {}, Stream.MOTION: {}}
    for r in recs:
        sign = 1.0 if r.label is POS else -1.0
        for s in Stream:
            v = np.full(dim, constant) if constant is not None else rng.normal(size=dim) + 3 * sign
            out[s][r.id] = PooledFeature(r.id, v.astype(np.float32), s, 1)
    return out


def test_protocol_separable():
    recs = _records(10, 10)
    rep = run_protocol(split_1x2(recs, 0), _features(recs), {r.id: r.label for r in recs})
    assert len(rep.rows) == 9
    assert {(r.stream, r.protocol) for r in rep.rows} == {
        (s, p) for s in ("static", "motion", "fused") for p in (FOLD_AB, FOLD_BA, MEAN)
    }
    assert rep.row("fused", MEAN).acc == 1.0 and rep.row("fused", MEAN).f2 == 1.0
    tests = [set(a.test_ids) for a in rep.analyses]
    assert tests[0].isdisjoint(tests[1]) and tests[0] | tests[1] == {r.id for r in recs}
    for a in rep.analyses:
        assert set(a.train_ids).isdisjoint(a.test_ids)
        assert sorted(p.video_id for p in a.predictions) == sorted(a.test_ids)
    jsonschema.validate(json.loads(rep.dumps()), REPORT_SCHEMA)
    assert "Late Fusion" in rep.table()


def test_protocol_constant_features():
    recs = _records(6, 6)
    rep = run_protocol(split_1x2(recs, 0), _features(recs, constant=1.0), {r.id: r.label for r in recs})
    for r in rep.rows:
        assert r.acc == 0.5  # every video gets the same label: one rate is 1, the other 0


def test_protocol_missing_stream_is_single_stream():
    recs = _records(6, 6)
    feats = _features(recs)
    gone = recs[0].id
    del feats[Stream.MOTION][gone]
    rep = run_protocol(split_1x2(recs, 1), feats, {r.id: r.label for r in recs})
    pred = [p for a in rep.analyses for p in a.predictions if p.video_id == gone]
    assert pred and pred[0].p_motion is None and pred[0].flags == ["single-stream"]


def test_heldout():
    recs = _records(8, 8)
    feats = _features(recs)
    labels = {r.id: r.label for r in recs}
    ids = [r.id for r in recs]
    rep = run_heldout(ids[::2], ids[1::2], feats, labels, ProtocolConfig(seed=2))
    assert [r.protocol for r in rep.rows] == [HELDOUT] * 3
    assert rep.row("fused", HELDOUT).acc == 1.0
    jsonschema.validate(rep.to_json(), REPORT_SCHEMA)


def test_fusion_beats_noise_stream():
    # separable static stream, pure-noise motion stream
    recs = _records(12, 12)
    labels = {r.id: r.label for r in recs}
    for seed in range(5):
        feats = _features(recs, seed=seed)
        rng = np.random.default_rng(100 + seed)
        feats[Stream.MOTION] = {
            r.id: PooledFeature(r.id, rng.normal(size=6).astype(np.float32), Stream.MOTION, 1) for r in recs
        }
        rep = run_protocol(split_1x2(recs, seed), feats, labels, ProtocolConfig(seed=seed))
        assert rep.row("fused", MEAN).acc >= rep.row("motion", MEAN).acc
