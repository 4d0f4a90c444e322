"""relgraph: relational databases as temporal heterogeneous graphs, end to end.

Pipeline: load a multi-table database from CSVs plus a manifest, derive the
schema graph, materialize the entity graph with time-sorted adjacency,
generate training tables from historical windows, sample time-consistent
computation graphs, and train/evaluate a heterogeneous message passing
model. :class:`RelationalGNN` wraps the whole pipeline behind a
scikit-learn style fit/predict interface.
"""

from .encoder import RowEncoder, encode_row, fit_encoders
from .estimator import RelationalGNN
from .graph import (
    EntityGraph,
    NodeRef,
    build_entity_graph,
    degree_histogram,
    load_graph,
    neighbors_before,
    save_graph,
)
from .metrics import EvalReport, average_precision, evaluate, mae
from .model import (
    Adam,
    GraphBatch,
    ModelConfig,
    ModelParams,
    backward,
    forward,
    init_params,
    link_head,
    loss,
    node_head,
    predict,
    train,
)
from .sampler import ComputationGraph, SamplerConfig, biased_weights, sample, sample_batch
from .schema import SchemaGraph, build_schema_graph, is_connected, to_dot
from .store import (
    Database,
    SENTINEL_STATIC,
    load_database,
    row_count_summary,
    save_database,
    validate,
)
from .synth import SynthConfig, churn_oracle_scores, generate
from .tasks import (
    SplitConfig,
    TaskSpec,
    TrainingExample,
    TrainingTable,
    apply_entity_filter,
    generate_training_table,
    read_table,
    write_table,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ComputationGraph",
    "Database",
    "EntityGraph",
    "EvalReport",
    "GraphBatch",
    "ModelConfig",
    "ModelParams",
    "NodeRef",
    "RelationalGNN",
    "RowEncoder",
    "SENTINEL_STATIC",
    "SamplerConfig",
    "SchemaGraph",
    "SplitConfig",
    "SynthConfig",
    "TaskSpec",
    "TrainingExample",
    "TrainingTable",
    "apply_entity_filter",
    "average_precision",
    "backward",
    "biased_weights",
    "build_entity_graph",
    "build_schema_graph",
    "churn_oracle_scores",
    "degree_histogram",
    "encode_row",
    "evaluate",
    "fit_encoders",
    "forward",
    "generate",
    "generate_training_table",
    "init_params",
    "is_connected",
    "link_head",
    "load_database",
    "load_graph",
    "loss",
    "mae",
    "neighbors_before",
    "node_head",
    "predict",
    "read_table",
    "row_count_summary",
    "sample",
    "sample_batch",
    "save_database",
    "save_graph",
    "to_dot",
    "train",
    "validate",
    "write_table",
]
