"""Accuracy metrics and protocol-level aggregation."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, MetricError, ProtocolError

log = logging.getLogger(__name__)

# (features, attribute rows, class ids) -> predicted global class ids
Predictor = Callable[[np.ndarray, np.ndarray, tuple], np.ndarray]


def per_class_accuracy(predictions, labels, class_ids) -> float:
    """Macro-averaged accuracy in percent over the classes present in ``labels``."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise MetricError("empty evaluation set")
    if predictions.shape != labels.shape:
        raise MetricError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    class_ids = [int(c) for c in class_ids]
    stray = set(np.unique(labels).tolist()) - set(class_ids)
    if stray:
        raise MetricError(f"labels outside the evaluated classes: {sorted(stray)}")
    accs = []
    for c in class_ids:
        mask = labels == c
        n = int(mask.sum())
        if n == 0:
            log.warning("class %d has no test samples; excluded from the macro mean", c)
            continue
        accs.append(np.count_nonzero(predictions[mask] == c) / n)
    return 100.0 * float(np.mean(accs))


def sample_accuracy(predictions, labels) -> float:
    """Micro (per-sample) accuracy in percent; diagnostic only."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise MetricError("empty evaluation set")
    return 100.0 * float(np.mean(np.asarray(predictions) == labels))


def harmonic_mean(s: float, u: float) -> float:
    if s < 0 or u < 0:
        raise DomainError(f"harmonic mean of negative accuracy ({s}, {u})")
    if s + u == 0:
        return 0.0
    return 2.0 * u * s / (u + s)


@dataclass
class TaskResult:
    task_id: int
    seen_acc: float
    unseen_acc: float
    harmonic: float
    seen_sample_acc: float | None = None
    unseen_sample_acc: float | None = None

    @classmethod
    def from_accuracies(cls, task_id, seen_acc, unseen_acc, **diag) -> "TaskResult":
        return cls(task_id, seen_acc, unseen_acc, harmonic_mean(seen_acc, unseen_acc), **diag)


@dataclass
class MetricsReport:
    per_task: list
    mSA: float
    mUA: float
    mH: float
    protocol: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "mSA": self.mSA,
            "mUA": self.mUA,
            "mH": self.mH,
            "per_task": [asdict(r) for r in self.per_task],
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "mSA", "mUA", "mH"])
        for r in self.per_task:
            w.writerow([r.task_id, f"{r.seen_acc:.2f}", f"{r.unseen_acc:.2f}", f"{r.harmonic:.2f}"])
        return buf.getvalue()


def evaluate_split(predict: Predictor, seen_test, unseen_test, attributes, seen_ids, unseen_ids,
                   task_id: int = 1) -> TaskResult:
    """Seen and unseen accuracy against the joint seen+unseen label space."""
    class_ids = tuple(seen_ids) + tuple(unseen_ids)
    if not seen_ids or not unseen_ids:
        raise ProtocolError("GZSL evaluation needs both seen and unseen classes")
    ps = predict(seen_test.features, attributes, class_ids)
    pu = predict(unseen_test.features, attributes, class_ids)
    return TaskResult.from_accuracies(
        task_id,
        per_class_accuracy(ps, seen_test.labels, seen_ids),
        per_class_accuracy(pu, unseen_test.labels, unseen_ids),
        seen_sample_acc=sample_accuracy(ps, seen_test.labels),
        unseen_sample_acc=sample_accuracy(pu, unseen_test.labels),
    )


def evaluate_view(predict: Predictor, view) -> TaskResult:
    return evaluate_split(predict, view.seen_test(), view.unseen_test(), view.attribute_table,
                          view.seen_class_ids, view.unseen_class_ids, view.task_id)


def gzsl_evaluate(predict: Predictor, seen_test, unseen_test, attributes, seen_ids, unseen_ids) -> MetricsReport:
    r = evaluate_split(predict, seen_test, unseen_test, attributes, seen_ids, unseen_ids)
    return MetricsReport([r], r.seen_acc, r.unseen_acc, harmonic_mean(r.seen_acc, r.unseen_acc), "gzsl")


def _aggregate(results, task_ids, protocol) -> MetricsReport:
    by_task = {r.task_id: r for r in results}
    missing = [t for t in task_ids if t not in by_task]
    if missing:
        raise MetricError(f"missing results for tasks {missing}")
    rows = [by_task[t] for t in task_ids]
    return MetricsReport(
        rows,
        float(np.mean([r.seen_acc for r in rows])),
        float(np.mean([r.unseen_acc for r in rows])),
        float(np.mean([r.harmonic for r in rows])),
        protocol,
    )


def continual_metrics_fixed(results, K: int) -> MetricsReport:
    """Means over tasks 1..K-1; the last task has no unseen classes."""
    if K < 2:
        raise MetricError("fixed protocol needs K >= 2")
    return _aggregate(results, range(1, K), "fixed")


def continual_metrics_dynamic(results, K: int) -> MetricsReport:
    if K < 1:
        raise MetricError("dynamic protocol needs K >= 1")
    return _aggregate(results, range(1, K + 1), "dynamic")
