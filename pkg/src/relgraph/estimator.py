"""Scikit-learn style front door: fit on a database, predict on training tables."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .encoder import RowEncoder
from .graph import build_entity_graph
from .model import ModelConfig, predict, train
from .sampler import SamplerConfig
from .schema import build_schema_graph
from .store import Database
from .tasks import TrainingTable


class RelationalGNN(BaseEstimator):
    """End-to-end model over a relational database.

    ``fit`` takes the database and a training table (supervision only: keys,
    seed times, labels) and builds everything else itself: schema graph,
    entity graph, leakage-free row encoders, then the trained message
    passing network. ``predict`` scores any training table over the same
    database; for binary tasks it returns probabilities.

    >>> model = RelationalGNN(task="binary", steps=150).fit(db, tables["train"])
    >>> scores = model.predict(tables["val"])
    """

    def __init__(
        self,
        task: str = "binary",
        layers: int = 2,
        hidden_dim: int = 32,
        fanouts: tuple[int, ...] = (10, 10),
        aggregator: str = "mean",
        strategy: str = "uniform",
        half_life: float | None = None,
        lr: float = 1e-2,
        steps: int = 200,
        batch_size: int = 32,
        text_dim: int = 16,
        seed: int = 0,
        encoder_cutoff: int | None = None,
    ):
        self.task = task
        self.layers = layers
        self.hidden_dim = hidden_dim
        self.fanouts = fanouts
        self.aggregator = aggregator
        self.strategy = strategy
        self.half_life = half_life
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.text_dim = text_dim
        self.seed = seed
        self.encoder_cutoff = encoder_cutoff

    def _configs(self) -> tuple[ModelConfig, SamplerConfig]:
        if self.task not in ("binary", "regression"):
            raise ValueError(f"task must be 'binary' or 'regression', got {self.task!r}")
        model_cfg = ModelConfig(
            layers=self.layers,
            hidden_dim=self.hidden_dim,
            aggregator=self.aggregator,
            head="node_binary" if self.task == "binary" else "node_regression",
            lr=self.lr,
            steps=self.steps,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        sampler_cfg = SamplerConfig(
            hops=self.layers,
            fanouts=tuple(self.fanouts),
            strategy=self.strategy,
            half_life=self.half_life,
            rng_seed=self.seed,
        )
        return model_cfg, sampler_cfg

    def fit(self, db: Database, table: TrainingTable):
        if not table.examples:
            raise ValueError("empty training table")
        cutoff = self.encoder_cutoff
        if cutoff is None:
            # Statistics may use anything up to the first unseen window;
            # with default strides this equals the validation timestamp.
            cutoff = int(table.times().max())
            if table.task is not None:
                cutoff += table.task.window
        model_cfg, sampler_cfg = self._configs()
        self.db_ = db
        self.schema_ = build_schema_graph(db)
        self.graph_ = build_entity_graph(db, self.schema_)
        self.encoder_ = RowEncoder(out_dim=self.hidden_dim, text_dim=self.text_dim, seed=self.seed).fit(db, cutoff)
        self.params_, self.loss_curve_ = train(db, self.graph_, self.encoder_, table, model_cfg, sampler_cfg)
        return self

    def predict(self, table: TrainingTable) -> np.ndarray:
        check_is_fitted(self, "params_")
        model_cfg, sampler_cfg = self._configs()
        return predict(self.params_, model_cfg, sampler_cfg, self.graph_, self.encoder_, self.db_, table)

    def predict_proba(self, table: TrainingTable) -> np.ndarray:
        if self.task != "binary":
            raise ValueError("predict_proba is only defined for binary tasks")
        p = self.predict(table)
        return np.column_stack([1.0 - p, p])
