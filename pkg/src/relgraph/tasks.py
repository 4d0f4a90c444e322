"""Training-table generation: windowed labels, entity filters, temporal splits.

Labels are aggregated over the half-open window ``(t, t + window]``: events
at exactly the seed time are model inputs, never labels, which keeps the
label window disjoint from the inclusive ``tau <= t`` feature filter. Train
seed times walk backwards from the validation timestamp in fixed strides,
so no train label window ever crosses it.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .store import Database, parse_time, format_time

LABEL_RULES = ("count_events", "sum_attribute", "exists_event", "negated_exists")
FILTER_RULES = ("none", "active_within")
BINARY_RULES = ("exists_event", "negated_exists")

DAY = 86400


class TaskError(Exception):
    """Inconsistent task specification or split configuration."""


@dataclass(frozen=True)
class LabelRule:
    kind: str
    fact_table: str
    fk_column: str
    attribute: str | None = None  # sum_attribute only


@dataclass(frozen=True)
class EntityFilter:
    kind: str = "none"
    lookback: int = 0  # seconds, active_within only


@dataclass(frozen=True)
class TaskSpec:
    name: str
    entity_table: str
    task_kind: str  # binary_classification | regression
    window: int  # seconds
    label_rule: LabelRule
    entity_filter: EntityFilter = EntityFilter()
    metric: str = ""

    def __post_init__(self):
        if self.window <= 0:
            raise TaskError("window must be positive")
        if self.task_kind not in ("binary_classification", "regression"):
            raise TaskError(f"unknown task kind {self.task_kind!r}")
        if self.label_rule.kind not in LABEL_RULES:
            raise TaskError(f"unknown label rule {self.label_rule.kind!r}")
        if self.entity_filter.kind not in FILTER_RULES:
            raise TaskError(f"unknown entity filter {self.entity_filter.kind!r}")
        is_binary = self.label_rule.kind in BINARY_RULES
        if is_binary != (self.task_kind == "binary_classification"):
            raise TaskError(f"label rule {self.label_rule.kind!r} does not fit {self.task_kind!r}")
        expected_metric = "AP" if self.task_kind == "binary_classification" else "MAE"
        metric = self.metric or expected_metric
        if metric.upper() != expected_metric:
            raise TaskError(f"metric {self.metric!r} does not fit {self.task_kind!r}")
        object.__setattr__(self, "metric", expected_metric)
        if self.label_rule.kind == "sum_attribute" and not self.label_rule.attribute:
            raise TaskError("sum_attribute needs an attribute name")

    def check_against(self, db: Database) -> None:
        """Verify the single-hop fk path from fact table to entity table exists."""
        fact = db.table(self.label_rule.fact_table)
        db.table(self.entity_table)
        col = next((c for c in fact.fk_columns if c.name == self.label_rule.fk_column), None)
        if col is None or col.target != self.entity_table:
            raise TaskError(
                f"{self.label_rule.fact_table!r} has no foreign key "
                f"{self.label_rule.fk_column!r} -> {self.entity_table!r}"
            )
        if fact.is_static:
            raise TaskError(f"fact table {self.label_rule.fact_table!r} has no timestamp column")
        if self.label_rule.kind == "sum_attribute" and self.label_rule.attribute not in fact.num_values:
            raise TaskError(f"no numerical column {self.label_rule.attribute!r} on the fact table")


@dataclass(frozen=True)
class SplitConfig:
    t_val: int
    t_test: int
    train_strides: int
    stride: int | None = None  # defaults to the task window

    def __post_init__(self):
        if self.t_val >= self.t_test:
            raise TaskError("t_val must precede t_test")
        if self.train_strides < 1:
            raise TaskError("train_strides must be at least 1")
        if self.stride is not None and self.stride <= 0:
            raise TaskError("stride must be positive")


@dataclass(frozen=True)
class TrainingExample:
    keys: tuple[str, ...]
    t: int
    y: float


@dataclass
class TrainingTable:
    task: TaskSpec | None
    split: str
    entity_table: str
    examples: list[TrainingExample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)

    def labels(self) -> np.ndarray:
        return np.array([e.y for e in self.examples], dtype=np.float64)

    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.examples], dtype=np.int64)


def task_spec_from_json(doc: dict | str | Path) -> TaskSpec:
    if not isinstance(doc, dict):
        doc = json.loads(Path(doc).read_text(encoding="utf-8"))
    label = doc["label"]
    filt = doc.get("filter", {"rule": "none"})
    lookback = int(round(float(filt.get("lookback_days", 0)) * DAY))
    return TaskSpec(
        name=doc["name"],
        entity_table=doc["entity_table"],
        task_kind=doc["kind"],
        window=int(round(float(doc["window_days"]) * DAY)),
        label_rule=LabelRule(
            kind=label["rule"],
            fact_table=label["fact_table"],
            fk_column=label["fk"],
            attribute=label.get("attribute"),
        ),
        entity_filter=EntityFilter(kind=filt.get("rule", "none"), lookback=lookback),
        metric=doc.get("metric", ""),
    )


def split_config_from_json(doc: dict | str | Path) -> SplitConfig:
    if not isinstance(doc, dict):
        doc = json.loads(Path(doc).read_text(encoding="utf-8"))
    stride = doc.get("stride_days")
    return SplitConfig(
        t_val=parse_time(str(doc["t_val"])),
        t_test=parse_time(str(doc["t_test"])),
        train_strides=int(doc["train_strides"]),
        stride=int(round(float(stride) * DAY)) if stride is not None else None,
    )


def apply_entity_filter(db: Database, spec: TaskSpec, t: int) -> np.ndarray:
    """Local ids of entities eligible at seed time ``t`` (ascending).

    ``active_within`` keeps entities with at least one linked fact row in
    the closed interval ``[t - lookback, t]``; ``none`` keeps every row.
    """
    entity = db.table(spec.entity_table)
    if spec.entity_filter.kind == "none":
        return np.arange(entity.n_rows, dtype=np.int64)
    fact = db.table(spec.label_rule.fact_table)
    refs = fact.fk_refs[spec.label_rule.fk_column]
    lo = int(np.searchsorted(fact.times, t - spec.entity_filter.lookback, side="left"))
    hi = int(np.searchsorted(fact.times, t, side="right"))
    window_refs = refs[lo:hi]
    return np.unique(window_refs[window_refs >= 0])


def _window_labels(db: Database, spec: TaskSpec, entity_ids: np.ndarray, t: int) -> np.ndarray:
    fact = db.table(spec.label_rule.fact_table)
    entity = db.table(spec.entity_table)
    refs = fact.fk_refs[spec.label_rule.fk_column]
    lo = int(np.searchsorted(fact.times, t, side="right"))
    hi = int(np.searchsorted(fact.times, t + spec.window, side="right"))
    window_refs = refs[lo:hi]
    valid = window_refs >= 0

    kind = spec.label_rule.kind
    if kind == "sum_attribute":
        values = fact.num_values[spec.label_rule.attribute][lo:hi].copy()
        values[fact.num_missing[spec.label_rule.attribute][lo:hi]] = 0.0  # missing adds nothing
        sums = np.bincount(window_refs[valid], weights=values[valid], minlength=entity.n_rows)
        return sums[entity_ids]
    counts = np.bincount(window_refs[valid], minlength=entity.n_rows)[entity_ids]
    if kind == "count_events":
        return counts.astype(np.float64)
    if kind == "exists_event":
        return (counts > 0).astype(np.float64)
    return (counts == 0).astype(np.float64)  # negated_exists


def train_seed_times(db: Database, spec: TaskSpec, split: SplitConfig) -> list[int]:
    """Historical seed times t_val - k*stride, newest first, clipped to the data start."""
    stride = split.stride if split.stride is not None else spec.window
    t_min = db.min_time()
    seeds = []
    for k in range(1, split.train_strides + 1):
        t = split.t_val - k * stride
        if t_min is not None and t < t_min:
            break
        seeds.append(t)
    return seeds


def generate_training_table(db: Database, spec: TaskSpec, split: SplitConfig) -> dict[str, TrainingTable]:
    """Build the train/val/test training tables for a task.

    Train examples use seed times walking back from ``t_val``; validation
    sits at ``t_val`` and test at ``t_test``. Labels come from the label
    rule over ``(t, t + window]``, entities from the entity filter at ``t``.
    """
    spec.check_against(db)
    t_max = db.max_time()
    if t_max is None or split.t_test + spec.window > t_max:
        raise TaskError(
            f"window exceeds data horizon: t_test + window = "
            f"{format_time(split.t_test + spec.window)} is past {format_time(t_max or 0)}"
        )

    entity = db.table(spec.entity_table)

    def table_at(times: list[int], split_name: str) -> TrainingTable:
        examples = []
        for t in times:
            ids = apply_entity_filter(db, spec, t)
            if ids.size == 0:
                warnings.warn(f"task {spec.name!r}: no entities pass the filter at {format_time(t)}")
                continue
            labels = _window_labels(db, spec, ids, t)
            examples.extend(
                TrainingExample((entity.keys[int(i)],), t, float(y)) for i, y in zip(ids, labels)
            )
        return TrainingTable(spec, split_name, spec.entity_table, examples)

    return {
        "train": table_at(train_seed_times(db, spec, split), "train"),
        "val": table_at([split.t_val], "val"),
        "test": table_at([split.t_test], "test"),
    }


_NODE_HEADER = ["EntityID", "Time", "Label"]
_LINK_HEADER = ["SourceEntityID", "TargetEntityID", "Time", "Label"]


def write_table(tt: TrainingTable, path) -> None:
    """Write a training table as CSV; one- and two-key layouts supported."""
    n_keys = len(tt.examples[0].keys) if tt.examples else 1
    header = _NODE_HEADER if n_keys == 1 else _LINK_HEADER
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for ex in tt.examples:
            writer.writerow([*ex.keys, format_time(ex.t), repr(ex.y)])


def read_table(path, task: TaskSpec | None = None, split: str = "") -> TrainingTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header not in (_NODE_HEADER, _LINK_HEADER):
            raise TaskError(f"{path}: unrecognized training-table header {header}")
        n_keys = 1 if header == _NODE_HEADER else 2
        examples = []
        for record in reader:
            keys = tuple(record[:n_keys])
            examples.append(TrainingExample(keys, parse_time(record[n_keys]), float(record[n_keys + 1])))
    return TrainingTable(task, split, task.entity_table if task else "", examples)


def write_predictions(path, tt: TrainingTable, preds: np.ndarray) -> None:
    """Prediction file: one row per training-table example, order preserved."""
    if len(preds) != len(tt.examples):
        raise ValueError(f"{len(preds)} predictions for {len(tt.examples)} examples")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["EntityID", "Time", "Prediction"])
        for ex, p in zip(tt.examples, preds):
            writer.writerow(["|".join(ex.keys), format_time(ex.t), repr(float(p))])


def read_predictions(path) -> list[tuple[tuple[str, ...], int, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["EntityID", "Time", "Prediction"]:
            raise TaskError(f"{path}: unrecognized prediction header {header}")
        rows = []
        for record in reader:
            rows.append((tuple(record[0].split("|")), parse_time(record[1]), float(record[2])))
    return rows
