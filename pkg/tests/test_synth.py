"""Synthetic database: determinism, integrity, plantable signal."""

import numpy as np
import pytest

from relgraph.graph import build_entity_graph
from relgraph.metrics import average_precision
from relgraph.schema import build_schema_graph, is_connected
from relgraph.store import load_database, row_count_summary, validate
from relgraph.synth import (
    SynthConfig,
    _quotas,
    churn_oracle_scores,
    generate,
    synth_config_from_json,
)
from relgraph.tasks import EntityFilter, LabelRule, SplitConfig, TaskSpec, generate_training_table

HORIZON = 10**6


def small_cfg(signal=1.0, seed=0, n_txn=2000):
    return SynthConfig(
        n_customers=120, n_products=30, n_transactions=n_txn,
        t_start=0, t_end=HORIZON, signal_strength=signal, rng_seed=seed,
    )


def churn_task(window):
    return TaskSpec(
        name="churn", entity_table="customers", task_kind="binary_classification",
        window=window, label_rule=LabelRule("negated_exists", "transactions", "customer_id"),
        entity_filter=EntityFilter("active_within", 2 * window),
    )


def val_table_and_scores(cfg, tmp_path):
    manifest = generate(cfg, tmp_path)
    db = load_database(manifest, tmp_path)
    window = HORIZON // 10
    t_test = db.max_time() - window
    split = SplitConfig(t_val=t_test - window, t_test=t_test, train_strides=3)
    tables = generate_training_table(db, churn_task(window), split)
    oracle = churn_oracle_scores(cfg, split.t_val, window)
    val = tables["val"]
    scores = np.array([oracle[ex.keys[0]] for ex in val.examples])
    return val, scores


def test_deterministic_byte_identical(tmp_path):
    cfg = small_cfg(signal=0.7, seed=5)
    generate(cfg, tmp_path / "a")
    generate(cfg, tmp_path / "b")
    for name in ("manifest.json", "customers.csv", "products.csv", "transactions.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_different_seed_differs(tmp_path):
    generate(small_cfg(seed=1), tmp_path / "a")
    generate(small_cfg(seed=2), tmp_path / "b")
    assert (tmp_path / "a" / "transactions.csv").read_bytes() != (tmp_path / "b" / "transactions.csv").read_bytes()


def test_referential_integrity_and_counts(tmp_path):
    cfg = small_cfg()
    manifest = generate(cfg, tmp_path)
    db = load_database(manifest, tmp_path)
    assert not validate(db)
    assert row_count_summary(db) == {"customers": 120, "products": 30, "transactions": 2000}
    assert is_connected(build_schema_graph(db))
    build_entity_graph(db, build_schema_graph(db))  # dangling refs would raise


def test_exact_counts_small_config(tmp_path):
    cfg = SynthConfig(n_customers=100, n_products=50, n_transactions=1000,
                      t_start=0, t_end=HORIZON, signal_strength=0.6, rng_seed=0)
    manifest = generate(cfg, tmp_path)
    db = load_database(manifest, tmp_path)
    assert row_count_summary(db) == {"customers": 100, "products": 50, "transactions": 1000}


def test_timestamps_within_horizon(tmp_path):
    for signal in (0.0, 0.5, 1.0):
        cfg = small_cfg(signal=signal)
        manifest = generate(cfg, tmp_path / f"s{signal}")
        db = load_database(manifest, tmp_path / f"s{signal}")
        times = db.table("transactions").times
        assert times.min() >= cfg.t_start and times.max() < cfg.t_end


def test_quotas_sum_to_scheduled_total():
    for signal in (0.0, 0.3, 1.0):
        cfg = small_cfg(signal=signal)
        assert _quotas(cfg).sum() == round(signal * cfg.n_transactions)


def test_oracle_ap_strong_at_full_signal(tmp_path):
    val, scores = val_table_and_scores(small_cfg(signal=1.0, seed=3), tmp_path)
    ap = average_precision(scores, val.labels())
    assert ap >= 0.95


def test_oracle_ap_monotone_in_signal(tmp_path):
    aps = []
    for signal in (0.0, 0.5, 1.0):
        val, scores = val_table_and_scores(small_cfg(signal=signal, seed=3), tmp_path / f"s{signal}")
        aps.append(average_precision(scores, val.labels()))
    assert aps[0] <= aps[1] <= aps[2]


def test_no_signal_means_ap_at_prevalence(tmp_path):
    # Monte Carlo: random scores on the churn labels of an s=0 database stay
    # near the positive rate, the AP of an uninformed classifier.
    val, _ = val_table_and_scores(small_cfg(signal=0.0, seed=6, n_txn=4000), tmp_path)
    labels = val.labels()
    prevalence = labels.mean()
    gen = np.random.default_rng(0)
    aps = [average_precision(gen.random(len(labels)), labels) for _ in range(30)]
    assert abs(np.mean(aps) - prevalence) < 0.05


def test_config_validation_and_json():
    with pytest.raises(ValueError):
        SynthConfig(0, 1, 1, 0, 10)
    with pytest.raises(ValueError):
        SynthConfig(1, 1, 1, 10, 10)
    with pytest.raises(ValueError):
        SynthConfig(1, 1, 1, 0, 10, signal_strength=1.5)
    cfg = synth_config_from_json(
        {
            "n_customers": 10, "n_products": 5, "n_transactions": 100,
            "t_start": "1970-01-01", "t_end": "1971-01-01", "signal_strength": 0.25, "rng_seed": 4,
        }
    )
    assert cfg.n_customers == 10 and cfg.signal_strength == 0.25
    assert cfg.t_end == 365 * 86400


def test_product_text_non_degenerate(tmp_path):
    manifest = generate(small_cfg(), tmp_path)
    db = load_database(manifest, tmp_path)
    descriptions = db.table("products").text_values["description"]
    assert len(set(descriptions)) > 1
    assert all(len(d.split()) == 3 for d in descriptions)
