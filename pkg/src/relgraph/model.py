"""Heterogeneous temporal message passing with hand-derived gradients.

One layer updates node v of type T as::

    h_v <- relu( W_T h_v + b_T + sum_R [ W_R agg{ h_w : (w -> v) of type R } + b_R ] )

with ``agg`` a permutation-invariant set aggregator (mean, sum or max) over
the in-neighbors of each incoming relation; relations with no in-edges at a
node contribute exactly zero. The outer combination over relations is a
sum. A node first gathered at hop d is updated at layers 1..L-d, so its
final representation lands at layer L-d and the seed's at layer L
(the standard schedule for sampled subgraphs).

Everything runs in float64 on plain numpy arrays so analytic gradients can
be verified against central finite differences to tight tolerances. The
reverse pass mirrors the forward computation exactly, including the
identity carry for nodes a layer does not update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import binio, rng
from .encoder import RowEncoder
from .graph import EntityGraph, NodeRef
from .sampler import ComputationGraph, SamplerConfig, sample_batch
from .schema import SchemaGraph
from .store import Database
from .tasks import TrainingTable

AGGREGATORS = ("mean", "sum", "max")
HEADS = ("node_binary", "node_regression", "link_score")


class TrainingDiverged(Exception):
    """Raised when the loss stops being finite during training."""


@dataclass(frozen=True)
class ModelConfig:
    layers: int
    hidden_dim: int | dict = 32
    aggregator: str = "mean"
    head: str = "node_binary"
    lr: float = 1e-3
    steps: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if isinstance(self.hidden_dim, int) and self.hidden_dim < 1:
            raise ValueError("hidden_dim must be positive")

    def hidden_for(self, table: str) -> int:
        dim = int(self.hidden_dim[table]) if isinstance(self.hidden_dim, dict) else int(self.hidden_dim)
        if dim < 1:
            raise ValueError(f"hidden dim for {table!r} must be positive")
        return dim

    @property
    def loss_kind(self) -> str:
        return "bce_with_logits" if self.head == "node_binary" else "l1"


class ModelParams:
    """Named float64 arrays in a canonical order (the optimizer relies on it)."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.arrays = arrays

    def __getitem__(self, key: str) -> np.ndarray:
        return self.arrays[key]

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def save(self, path, config: dict | None = None) -> None:
        binio.write_container(path, "model_params", {"config": config or {}}, self.arrays)

    @classmethod
    def load(cls, path) -> tuple["ModelParams", dict]:
        meta, arrays = binio.read_container(path, kind="model_params")
        return cls(arrays), meta.get("config", {})


def init_params(
    cfg: ModelConfig,
    encoder: RowEncoder,
    schema: SchemaGraph,
    entity_table: str | None = None,
    link_tables: tuple[str, str] | None = None,
) -> ModelParams:
    """Seeded initialization; matrices uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).

    Fusion matrices start from the encoder's own initialization so that an
    untrained model reproduces ``encoder.encode_row`` exactly. Biases start
    at zero.
    """
    gen = rng.stream(cfg.seed, rng.PARAM_INIT_STREAM)

    def glorot(rows: int, cols: int) -> np.ndarray:
        a = math.sqrt(6.0 / (rows + cols))
        return gen.uniform(-a, a, size=(rows, cols))

    arrays: dict[str, np.ndarray] = {}
    for table in schema.node_types:
        if encoder.dims_[table] != cfg.hidden_for(table):
            raise ValueError(
                f"encoder dim {encoder.dims_[table]} != model hidden dim "
                f"{cfg.hidden_for(table)} for table {table!r}"
            )
        arrays[f"fusion::{table}"] = encoder.fusion_[table].copy()
    for layer in range(cfg.layers):
        for table in schema.node_types:
            d = cfg.hidden_for(table)
            arrays[f"self_w::{layer}::{table}"] = glorot(d, d)
            arrays[f"self_b::{layer}::{table}"] = np.zeros(d)
        for et in schema.edge_types:
            d_src, d_dst = cfg.hidden_for(et.src), cfg.hidden_for(et.dst)
            arrays[f"rel_w::{layer}::{et.name}"] = glorot(d_dst, d_src)
            arrays[f"rel_b::{layer}::{et.name}"] = np.zeros(d_dst)
    if cfg.head in ("node_binary", "node_regression"):
        if entity_table is None:
            raise ValueError("node heads need the entity table")
        d = cfg.hidden_for(entity_table)
        arrays["head_w"] = gen.uniform(-math.sqrt(6.0 / (d + 1)), math.sqrt(6.0 / (d + 1)), size=d)
        arrays["head_b"] = np.zeros(())
    else:
        if link_tables is None:
            raise ValueError("the link head needs its two entity tables")
        arrays["head_W"] = glorot(cfg.hidden_for(link_tables[0]), cfg.hidden_for(link_tables[1]))
    return ModelParams(arrays)


@dataclass
class _LayerRelation:
    type_name: str
    src_table: str
    dst_table: str
    src_pos: np.ndarray
    dst_pos: np.ndarray
    counts: np.ndarray  # in-edges per destination slot at this layer


@dataclass
class _LayerPlan:
    updated: dict[str, np.ndarray]  # table -> slot indices refreshed this layer
    relations: list[_LayerRelation]


class GraphBatch:
    """Disjoint union of computation graphs, grouped by table for typed math.

    Each sampled node becomes one slot of its table; the same database row
    appearing in two examples occupies two slots, so per-example gradients
    stay independent.
    """

    def __init__(self, graphs: list[ComputationGraph], layers: int):
        if not graphs:
            raise ValueError("empty batch")
        self.layers = layers
        self.n_examples = len(graphs)
        self.seed_table = graphs[0].seed.table

        local_ids: dict[str, list[int]] = {}
        depth: dict[str, list[int]] = {}
        slot_of: list[list[tuple[str, int]]] = []
        seed_pos = []
        edges: dict[str, tuple[list[int], list[int], str, str]] = {}
        for cg in graphs:
            if cg.seed.table != self.seed_table:
                raise ValueError("all seeds in a batch must share a table")
            slots = []
            for node in cg.nodes:
                bucket = local_ids.setdefault(node.table, [])
                depth.setdefault(node.table, []).append(node.hop)
                slots.append((node.table, len(bucket)))
                bucket.append(node.local_id)
            slot_of.append(slots)
            seed_pos.append(slots[0][1])
            for s, d, type_name in cg.edges:
                src_t, src_p = slots[s]
                dst_t, dst_p = slots[d]
                entry = edges.setdefault(type_name, ([], [], src_t, dst_t))
                entry[0].append(src_p)
                entry[1].append(dst_p)

        self.tables = list(local_ids.keys())
        self.local_ids = {t: np.array(v, dtype=np.int64) for t, v in local_ids.items()}
        self.depth = {t: np.array(v, dtype=np.int64) for t, v in depth.items()}
        self.sizes = {t: len(v) for t, v in local_ids.items()}
        self.seed_pos = np.array(seed_pos, dtype=np.int64)

        self.plans: list[_LayerPlan] = []
        for layer in range(1, layers + 1):
            max_depth = layers - layer
            updated = {
                t: np.flatnonzero(self.depth[t] <= max_depth)
                for t in self.tables
                if (self.depth[t] <= max_depth).any()
            }
            relations = []
            for type_name, (src_list, dst_list, src_t, dst_t) in edges.items():
                src_pos = np.array(src_list, dtype=np.int64)
                dst_pos = np.array(dst_list, dtype=np.int64)
                keep = self.depth[dst_t][dst_pos] <= max_depth
                if not keep.any():
                    continue
                src_pos, dst_pos = src_pos[keep], dst_pos[keep]
                counts = np.bincount(dst_pos, minlength=self.sizes[dst_t]).astype(np.float64)
                relations.append(_LayerRelation(type_name, src_t, dst_t, src_pos, dst_pos, counts))
            self.plans.append(_LayerPlan(updated, relations))

    def gather_raw(self, encoder: RowEncoder, db: Database) -> dict[str, np.ndarray]:
        return {t: encoder.raw_matrix(db.table(t), self.local_ids[t]) for t in self.tables}


@dataclass
class ForwardTrace:
    batch: GraphBatch
    cfg: ModelConfig
    params: ModelParams
    raw: dict[str, np.ndarray]
    h: list[dict[str, np.ndarray]]          # per layer 0..L: embeddings per table
    pre: list[dict[str, np.ndarray]]        # pre-activations per layer 1..L
    agg: list[dict[str, np.ndarray]] = field(default_factory=list)      # aggregated messages
    agg_max: list[dict[str, np.ndarray]] = field(default_factory=list)  # raw maxima (max agg only)

    @property
    def h_final(self) -> dict[str, np.ndarray]:
        return self.h[-1]

    def seed_embeddings(self) -> np.ndarray:
        return self.h[-1][self.batch.seed_table][self.batch.seed_pos]


def forward(params: ModelParams, cfg: ModelConfig, batch: GraphBatch, raw: dict[str, np.ndarray]) -> ForwardTrace:
    """Run all message-passing layers; returns the trace holding h^(0..L)."""
    h = {t: raw[t] @ params[f"fusion::{t}"].T for t in batch.tables}
    trace = ForwardTrace(batch, cfg, params, raw, [h], [])
    for layer, plan in enumerate(batch.plans):
        h_prev = trace.h[-1]
        acc = {t: np.zeros_like(h_prev[t]) for t in plan.updated}
        aggs: dict[str, np.ndarray] = {}
        maxes: dict[str, np.ndarray] = {}
        for rel in plan.relations:
            h_src = h_prev[rel.src_table][rel.src_pos]
            n_dst = batch.sizes[rel.dst_table]
            present = rel.counts > 0
            if cfg.aggregator == "max":
                mx = np.full((n_dst, h_src.shape[1]), -np.inf)
                np.maximum.at(mx, rel.dst_pos, h_src)
                maxes[rel.type_name] = mx
                agg = np.where(present[:, None], mx, 0.0)
            else:
                agg = np.zeros((n_dst, h_src.shape[1]))
                np.add.at(agg, rel.dst_pos, h_src)
                if cfg.aggregator == "mean":
                    agg[present] /= rel.counts[present, None]
            aggs[rel.type_name] = agg
            term = agg @ params[f"rel_w::{layer}::{rel.type_name}"].T
            term += params[f"rel_b::{layer}::{rel.type_name}"]
            term[~present] = 0.0  # absent relation contributes nothing, bias included
            acc[rel.dst_table] += term
        pre = {}
        h_next = {t: h_prev[t].copy() for t in batch.tables}
        for t, idx in plan.updated.items():
            p = h_prev[t] @ params[f"self_w::{layer}::{t}"].T + params[f"self_b::{layer}::{t}"] + acc[t]
            pre[t] = p
            h_next[t][idx] = np.maximum(p[idx], 0.0)
        trace.pre.append(pre)
        trace.agg.append(aggs)
        trace.agg_max.append(maxes)
        trace.h.append(h_next)
    return trace


def node_head(params: ModelParams, h_seed: np.ndarray) -> np.ndarray:
    """Linear map from seed embeddings to logits/values (one per example)."""
    return h_seed @ params["head_w"] + params["head_b"]


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def link_head(params: ModelParams, h_a: np.ndarray, h_b: np.ndarray) -> float:
    """Bilinear pair score h_a^T W h_b."""
    W = params["head_W"]
    if h_a.shape[-1] != W.shape[0] or h_b.shape[-1] != W.shape[1]:
        raise ValueError(f"embedding dims {h_a.shape[-1]}/{h_b.shape[-1]} do not fit head {W.shape}")
    return float(h_a @ W @ h_b)


def link_head_grads(params: ModelParams, h_a: np.ndarray, h_b: np.ndarray, dscore: float = 1.0):
    W = params["head_W"]
    return {
        "head_W": dscore * np.outer(h_a, h_b),
        "h_a": dscore * (W @ h_b),
        "h_b": dscore * (W.T @ h_a),
    }


def loss(kind: str, preds: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed loss over a batch and its gradient with respect to the predictions.

    ``bce_with_logits`` takes logits; ``l1`` uses subgradient 0 at zero error.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch: {preds.shape} vs {targets.shape}")
    if not (np.isfinite(preds).all() and np.isfinite(targets).all()):
        raise ValueError("non-finite inputs to the loss")
    if kind == "bce_with_logits":
        value = np.maximum(preds, 0.0) - preds * targets + np.log1p(np.exp(-np.abs(preds)))
        return float(value.sum()), sigmoid(preds) - targets
    if kind == "l1":
        return float(np.abs(preds - targets).sum()), np.sign(preds - targets)
    raise ValueError(f"unknown loss {kind!r}")


def backward(trace: ForwardTrace, dz: np.ndarray) -> dict[str, np.ndarray]:
    """Exact reverse-mode gradients for every parameter.

    ``dz`` is the loss gradient at the node-head output, one entry per
    example of the batch the trace was computed on.
    """
    batch, cfg, params = trace.batch, trace.cfg, trace.params
    grads = params.zeros_like()

    h_seed = trace.seed_embeddings()
    grads["head_w"] += dz @ h_seed
    grads["head_b"] += dz.sum()
    dh = {t: np.zeros_like(trace.h[-1][t]) for t in batch.tables}
    np.add.at(dh[batch.seed_table], batch.seed_pos, dz[:, None] * params["head_w"])

    for layer in range(batch.layers - 1, -1, -1):
        plan = batch.plans[layer]
        h_in = trace.h[layer]
        dh_in = {t: dh[t].copy() for t in batch.tables}  # identity carry
        # All updated rows are zeroed before any relation scatters into them.
        dpre_by_table = {}
        for t, idx in plan.updated.items():
            dh_in[t][idx] = 0.0
            dpre = np.zeros_like(dh[t])
            dpre[idx] = dh[t][idx] * (trace.pre[layer][t][idx] > 0)
            dpre_by_table[t] = dpre
            grads[f"self_w::{layer}::{t}"] += dpre.T @ h_in[t]
            grads[f"self_b::{layer}::{t}"] += dpre.sum(axis=0)
            dh_in[t][idx] += dpre[idx] @ params[f"self_w::{layer}::{t}"]
        for rel in plan.relations:
            present = rel.counts > 0
            dterm = dpre_by_table[rel.dst_table].copy()
            dterm[~present] = 0.0
            agg = trace.agg[layer][rel.type_name]
            grads[f"rel_w::{layer}::{rel.type_name}"] += dterm.T @ agg
            grads[f"rel_b::{layer}::{rel.type_name}"] += dterm.sum(axis=0)
            dagg = dterm @ params[f"rel_w::{layer}::{rel.type_name}"]
            if cfg.aggregator == "mean":
                contrib = dagg[rel.dst_pos] / rel.counts[rel.dst_pos, None]
            elif cfg.aggregator == "sum":
                contrib = dagg[rel.dst_pos]
            else:
                mx = trace.agg_max[layer][rel.type_name]
                h_src = h_in[rel.src_table][rel.src_pos]
                contrib = dagg[rel.dst_pos] * (h_src == mx[rel.dst_pos])
            np.add.at(dh_in[rel.src_table], rel.src_pos, contrib)
        dh = dh_in
    for t in batch.tables:
        grads[f"fusion::{t}"] += dh[t].T @ trace.raw[t]
    return grads


class Adam:
    """Adam over the canonical parameter order; float64 state."""

    def __init__(self, params: ModelParams, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for key, value in self.params.arrays.items():
            g = grads[key]
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            value -= self.lr * (self.m[key] / b1c) / (np.sqrt(self.v[key] / b2c) + self.eps)


def _resolve_refs(db: Database, table: TrainingTable) -> list[tuple[NodeRef, int]]:
    entity = db.table(table.entity_table)
    refs = []
    for ex in table.examples:
        local = entity.key_to_id.get(ex.keys[0])
        if local is None:
            raise KeyError(f"unknown entity key {ex.keys[0]!r} in table {table.entity_table!r}")
        refs.append((NodeRef(table.entity_table, local), ex.t))
    return refs


def train(
    db: Database,
    g: EntityGraph,
    encoder: RowEncoder,
    train_table: TrainingTable,
    model_cfg: ModelConfig,
    sampler_cfg: SamplerConfig,
) -> tuple[ModelParams, list[float]]:
    """Mini-batch training loop: sample, encode, forward, loss, backward, Adam.

    Deterministic for a fixed (data, config, seed): batch order comes from a
    dedicated shuffle stream, sampling streams advance with the global
    example counter, and updates run in the canonical parameter order.
    """
    if model_cfg.layers != sampler_cfg.hops:
        raise ValueError(f"model layers ({model_cfg.layers}) must equal sampler hops ({sampler_cfg.hops})")
    if model_cfg.head == "link_score":
        raise ValueError("training supports node-level heads only")
    if not train_table.examples:
        raise ValueError("empty training table")

    refs = _resolve_refs(db, train_table)
    targets = train_table.labels()
    params = init_params(model_cfg, encoder, g.schema, entity_table=train_table.entity_table)
    for t in g.table_names:
        encoder.raw_matrix(db.table(t))  # warm the cache outside the step loop
    optimizer = Adam(params, lr=model_cfg.lr)
    shuffler = rng.stream(model_cfg.seed, rng.SHUFFLE_STREAM)

    n = len(refs)
    order = np.arange(n)
    cursor = n  # forces a shuffle before the first batch
    curve: list[float] = []
    for step in range(model_cfg.steps):
        take = min(model_cfg.batch_size, n)
        if cursor + take > n:
            order = shuffler.permutation(n)
            cursor = 0
        chosen = order[cursor : cursor + take]
        cursor += take

        graphs = sample_batch(
            g, [refs[i] for i in chosen], sampler_cfg, first_stream=step * model_cfg.batch_size
        )
        batch = GraphBatch(graphs, model_cfg.layers)
        raw = batch.gather_raw(encoder, db)
        trace = forward(params, model_cfg, batch, raw)
        preds = node_head(params, trace.seed_embeddings())
        if not np.isfinite(preds).all():
            raise TrainingDiverged(f"non-finite predictions at step {step}")
        value, dz = loss(model_cfg.loss_kind, preds, targets[chosen])
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        grads = backward(trace, dz)
        optimizer.step(grads)
        curve.append(value / take)
    return params, curve


def predict(
    params: ModelParams,
    model_cfg: ModelConfig,
    sampler_cfg: SamplerConfig,
    g: EntityGraph,
    encoder: RowEncoder,
    db: Database,
    table: TrainingTable,
    chunk: int = 256,
) -> np.ndarray:
    """One prediction per example, order preserved; probabilities for binary heads.

    Sampling uses the dedicated prediction stream range indexed by absolute
    example position, so predictions are independent of chunking.
    """
    refs = _resolve_refs(db, table)
    out = np.zeros(len(refs), dtype=np.float64)
    for start in range(0, len(refs), chunk):
        part = refs[start : start + chunk]
        graphs = sample_batch(g, part, sampler_cfg, first_stream=rng.PREDICT_STREAM_BASE + start)
        batch = GraphBatch(graphs, model_cfg.layers)
        raw = batch.gather_raw(encoder, db)
        trace = forward(params, model_cfg, batch, raw)
        z = node_head(params, trace.seed_embeddings())
        out[start : start + len(part)] = sigmoid(z) if model_cfg.head == "node_binary" else z
    return out
