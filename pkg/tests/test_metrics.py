"""MAE and average precision against naive reference implementations."""

import numpy as np
import pytest

from relgraph.metrics import EvaluationError, average_precision, evaluate, mae
from relgraph.tasks import (
    EntityFilter,
    LabelRule,
    TaskSpec,
    TrainingExample,
    TrainingTable,
    write_predictions,
)


def naive_mae(preds, targets):
    total = 0.0
    for p, y in zip(preds, targets):
        total += abs(p - y)
    return total / len(preds)


def naive_average_precision(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    positives = sum(labels)
    ap = 0.0
    seen_pos = 0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            seen_pos += 1
            ap += seen_pos / rank
    return ap / positives


def test_mae_trivial_cases():
    assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mae([1.0, 3.0], [2.0, 5.0]) == 1.5


def test_mae_matches_naive_random():
    gen = np.random.default_rng(0)
    for _ in range(200):
        n = int(gen.integers(1, 50))
        p, y = gen.normal(size=n) * 10, gen.normal(size=n) * 10
        assert abs(mae(p, y) - naive_mae(p, y)) < 1e-12


def test_mae_translation_equivariant():
    gen = np.random.default_rng(1)
    p, y = gen.normal(size=30), gen.normal(size=30)
    for c in (-5.0, 0.1, 42.0):
        assert mae(p + c, y + c) == pytest.approx(mae(p, y), abs=1e-12)


def test_mae_errors():
    with pytest.raises(EvaluationError):
        mae([1.0], [1.0, 2.0])
    with pytest.raises(EvaluationError):
        mae([], [])
    with pytest.raises(EvaluationError):
        mae([np.nan], [0.0])


def test_ap_perfect_ranking():
    assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_ap_worked_example():
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(0.833333, abs=1e-6)


def test_ap_single_positive_ranked_last():
    for n in (2, 5, 11):
        scores = list(range(n, 0, -1))
        labels = [0] * (n - 1) + [1]
        assert average_precision(scores, labels) == pytest.approx(1 / n)


def test_ap_matches_naive_random():
    gen = np.random.default_rng(2)
    for _ in range(200):
        n = int(gen.integers(2, 60))
        scores = np.round(gen.random(n), 2)  # rounding forces plenty of ties
        labels = (gen.random(n) > 0.6).astype(float)
        if labels.sum() == 0:
            labels[0] = 1.0
        assert abs(average_precision(scores, labels) - naive_average_precision(scores, labels)) < 1e-12


def test_ap_invariant_under_monotone_transform():
    gen = np.random.default_rng(3)
    scores = gen.normal(size=40)
    labels = (gen.random(40) > 0.5).astype(float)
    labels[0] = 1.0
    base = average_precision(scores, labels)
    for f in (lambda s: 3 * s + 1, np.tanh, lambda s: np.exp(s / 2)):
        assert average_precision(f(scores), labels) == pytest.approx(base, abs=1e-12)


def test_ap_requires_positive():
    with pytest.raises(EvaluationError, match="positive"):
        average_precision([0.5, 0.2], [0, 0])
    with pytest.raises(EvaluationError):
        average_precision([0.5], [2])


def churn_task():
    return TaskSpec(
        name="churn",
        entity_table="customers",
        task_kind="binary_classification",
        window=100,
        label_rule=LabelRule("negated_exists", "transactions", "customer_id"),
        entity_filter=EntityFilter("none"),
    )


def truth_table():
    return TrainingTable(
        churn_task(),
        "val",
        "customers",
        [
            TrainingExample(("c1",), 100, 1.0),
            TrainingExample(("c2",), 100, 0.0),
            TrainingExample(("c3",), 100, 1.0),
        ],
    )


def test_evaluate_perfect_predictions(tmp_path):
    truth = truth_table()
    path = tmp_path / "preds.csv"
    write_predictions(path, truth, np.array([0.9, 0.1, 0.8]))
    report = evaluate(churn_task(), truth, path)
    assert report.metric == "AP" and report.value == 1.0 and report.n == 3
    assert '"task": "churn"' in report.to_json()


def test_evaluate_misaligned_keys(tmp_path):
    truth = truth_table()
    wrong = TrainingTable(None, "val", "customers",
                          [TrainingExample(("c1",), 100, 1.0), TrainingExample(("cX",), 100, 0.0),
                           TrainingExample(("c3",), 100, 1.0)])
    path = tmp_path / "preds.csv"
    write_predictions(path, wrong, np.array([0.9, 0.1, 0.8]))
    with pytest.raises(EvaluationError, match="misaligned.*c2.*cX"):
        evaluate(churn_task(), truth, path)


def test_evaluate_missing_prediction(tmp_path):
    truth = truth_table()
    partial = TrainingTable(None, "val", "customers", truth.examples[:2])
    path = tmp_path / "preds.csv"
    write_predictions(path, partial, np.array([0.9, 0.1]))
    with pytest.raises(EvaluationError, match="misaligned"):
        evaluate(churn_task(), truth, path)


def test_evaluate_composition_equals_direct_call(tmp_path):
    gen = np.random.default_rng(4)
    examples = [TrainingExample((f"c{i}",), 100, float(gen.integers(0, 2))) for i in range(40)]
    examples[0] = TrainingExample(("c0",), 100, 1.0)
    truth = TrainingTable(churn_task(), "val", "customers", examples)
    preds = gen.random(40)
    path = tmp_path / "preds.csv"
    write_predictions(path, truth, preds)
    report = evaluate(churn_task(), truth, path)
    assert report.value == pytest.approx(average_precision(preds, truth.labels()), abs=1e-12)
