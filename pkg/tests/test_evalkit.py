import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mainzsl.dataio import FeatureDataset
from mainzsl.errors import DomainError, MetricError
from mainzsl.evalkit import (
    TaskResult,
    continual_metrics_dynamic,
    continual_metrics_fixed,
    gzsl_evaluate,
    harmonic_mean,
    per_class_accuracy,
    sample_accuracy,
)


def test_per_class_accuracy_cases():
    y = np.array([0, 0, 1, 1])
    assert per_class_accuracy(y, y, [0, 1]) == 100.0
    assert per_class_accuracy(np.array([0, 0, 0, 0]), y, [0, 1]) == 50.0
    assert per_class_accuracy(np.array([1, 1, 0, 0]), y, [0, 1]) == 0.0


def test_macro_differs_from_micro():
    labels = np.array([0] * 10 + [1])
    preds = np.array([0] * 9 + [1] + [1])
    assert per_class_accuracy(preds, labels, [0, 1]) == 95.0
    assert sample_accuracy(preds, labels) == pytest.approx(1000 / 11)


def test_per_class_accuracy_errors():
    with pytest.raises(MetricError):
        per_class_accuracy(np.array([]), np.array([]), [0])
    with pytest.raises(MetricError):
        per_class_accuracy(np.array([0, 1]), np.array([0, 1]), [0])
    with pytest.raises(MetricError):
        per_class_accuracy(np.array([0]), np.array([0, 1]), [0, 1])


def test_harmonic_mean_cases():
    assert harmonic_mean(50, 50) == 50
    assert harmonic_mean(60, 40) == 48
    assert harmonic_mean(0, 73.0) == 0
    assert harmonic_mean(0, 0) == 0
    with pytest.raises(DomainError):
        harmonic_mean(-1, 10)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 100), st.floats(0, 100))
def test_harmonic_mean_bounds(s, u):
    h = harmonic_mean(s, u)
    lo = min(s, u)
    assert lo - 1e-9 <= h <= 2 * lo + 1e-9
    assert h <= (s + u) / 2 + 1e-9


def _split(n_per=3):
    feats = np.repeat(np.arange(4.0), n_per)[:, None]
    labels = np.repeat(np.arange(4), n_per)
    seen = FeatureDataset(feats[labels < 2], labels[labels < 2])
    unseen = FeatureDataset(feats[labels >= 2], labels[labels >= 2])
    return seen, unseen, np.eye(4)


def test_gzsl_oracle_and_seen_bias():
    seen, unseen, A = _split()
    oracle = lambda x, a, ids: np.asarray(ids)[x[:, 0].astype(int)]  # noqa: E731
    r = gzsl_evaluate(oracle, seen, unseen, A, [0, 1], [2, 3])
    assert (r.mSA, r.mUA, r.mH) == (100.0, 100.0, 100.0)
    biased = lambda x, a, ids: np.zeros(len(x), dtype=int)  # noqa: E731
    r = gzsl_evaluate(biased, seen, unseen, A, [0, 1], [2, 3])
    assert r.mUA == 0.0 and r.mH == 0.0 and r.mSA == 50.0


def test_fixed_aggregation_hand_example():
    rows = [TaskResult.from_accuracies(1, 80.0, 40.0), TaskResult.from_accuracies(2, 60.0, 60.0)]
    rep = continual_metrics_fixed(rows, 3)
    assert abs(rep.mSA - 70.0) < 1e-9 and abs(rep.mUA - 50.0) < 1e-9
    assert abs(rep.mH - (160 / 3 + 60) / 2) < 1e-9
    assert round(rep.mH, 2) == 56.67
    assert round(harmonic_mean(rep.mSA, rep.mUA), 2) == 58.33
    with pytest.raises(MetricError):
        continual_metrics_fixed(rows[:1], 3)


def test_identical_tasks_aggregate_to_same_value():
    rows = [TaskResult.from_accuracies(t, 70.0, 30.0) for t in (1, 2, 3)]
    rep = continual_metrics_dynamic(rows, 3)
    assert rep.mSA == 70.0 and rep.mUA == 30.0 and rep.mH == pytest.approx(harmonic_mean(70, 30))


def test_dynamic_aggregation():
    rows = [TaskResult(1, 0, 0, 40.0), TaskResult(2, 0, 0, 60.0)]
    assert continual_metrics_dynamic(rows, 2).mH == 50.0
    seen, unseen, A = _split()
    oracle = lambda x, a, ids: np.asarray(ids)[x[:, 0].astype(int)]  # noqa: E731
    g = gzsl_evaluate(oracle, seen, unseen, A, [0, 1], [2, 3])
    d = continual_metrics_dynamic(g.per_task, 1)
    assert (d.mSA, d.mUA, d.mH) == (g.mSA, g.mUA, g.mH)


def test_cub_shaped_dynamic_report():
    rows = [TaskResult.from_accuracies(t, 50.0 + t, 20.0 + t) for t in range(1, 21)]
    rep = continual_metrics_dynamic(rows, 20)
    assert len(rep.per_task) == 20
    assert len(rep.to_csv().splitlines()) == 21


def test_report_serialization():
    rows = [TaskResult.from_accuracies(1, 80.0, 40.0), TaskResult.from_accuracies(2, 60.0, 60.0)]
    rep = continual_metrics_fixed(rows, 3)
    d = json.loads(rep.to_json())
    assert d["protocol"] == "fixed" and len(d["per_task"]) == 2
    assert rep.to_csv().splitlines()[1] == "1,80.00,40.00,53.33"
    assert rep.to_json() == continual_metrics_fixed(rows, 3).to_json()
