"""Standardized evaluation: MAE for regression, average precision for binary tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .tasks import TaskSpec, TrainingTable, read_predictions


class EvaluationError(Exception):
    """Bad metric inputs or prediction/truth misalignment."""


@dataclass(frozen=True)
class EvalReport:
    task: str
    metric: str
    value: float
    n: int

    def to_json(self) -> str:
        return json.dumps({"task": self.task, "metric": self.metric, "value": self.value, "n": self.n})


def _check_pair(preds, targets) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.ndim != 1 or targets.ndim != 1:
        raise EvaluationError("inputs must be one-dimensional")
    if preds.size != targets.size:
        raise EvaluationError(f"length mismatch: {preds.size} vs {targets.size}")
    if preds.size == 0:
        raise EvaluationError("empty inputs")
    if not (np.isfinite(preds).all() and np.isfinite(targets).all()):
        raise EvaluationError("non-finite inputs")
    return preds, targets


def mae(preds, targets) -> float:
    """Mean absolute error (1/n) * sum |p_i - y_i|."""
    preds, targets = _check_pair(preds, targets)
    return float(np.mean(np.abs(preds - targets)))


def average_precision(scores, labels) -> float:
    """Average precision over the descending-score ranking.

    Ties keep their original input order (stable sort), so the value is
    deterministic. Requires at least one positive label.
    """
    scores, labels = _check_pair(scores, labels)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise EvaluationError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise EvaluationError("average precision needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    cum_pos = np.cumsum(ranked)
    precision_at = cum_pos / np.arange(1, ranked.size + 1)
    return float(precision_at[ranked == 1].sum() / n_pos)


def evaluate(task: TaskSpec, truth: TrainingTable, pred_file) -> EvalReport:
    """Align a prediction file with a ground-truth table and score it.

    Rows must match the truth table exactly on (entity keys, time); missing
    or extra predictions are a hard error listing the offenders, preventing
    silent misalignment.
    """
    rows = read_predictions(pred_file)
    predicted = {(keys, t): value for keys, t, value in rows}
    if len(predicted) != len(rows):
        raise EvaluationError(f"{pred_file}: duplicate (EntityID, Time) rows")
    wanted = [(ex.keys, ex.t) for ex in truth.examples]
    wanted_set = set(wanted)
    missing = [k for k in wanted if k not in predicted]
    extra = [k for k in predicted if k not in wanted_set]
    if missing or extra:
        raise EvaluationError(
            f"{pred_file}: predictions misaligned with truth; "
            f"missing={missing[:5]}{'...' if len(missing) > 5 else ''} "
            f"extra={extra[:5]}{'...' if len(extra) > 5 else ''}"
        )
    preds = np.array([predicted[k] for k in wanted], dtype=np.float64)
    labels = truth.labels()
    if task.metric == "AP":
        value = average_precision(preds, labels)
    else:
        value = mae(preds, labels)
    return EvalReport(task.name, task.metric, value, len(wanted))
