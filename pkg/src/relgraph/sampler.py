"""Bounded, time-consistent computation graphs around a seed node.

Starting from a seed node and seed time t, the sampler expands the frontier
for a fixed number of hops. At hop i, for every frontier node and every
incoming edge type, it selects at most ``fanouts[i]`` neighbors from the
time-valid prefix (neighbors with timestamp <= t; static nodes always
qualify) under one of three strategies:

* ``uniform``  uniform without replacement over the prefix,
* ``ordered``  the latest neighbors, i.e. the suffix of the prefix,
* ``biased``   without replacement, weighted by 2**(-age / half_life).

When the prefix has at most ``fanouts[i]`` entries, all strategies take the
whole prefix and draw nothing from the generator, so they agree exactly and
the selection never depends on rows timestamped after t. Randomness comes
from a counter-based stream keyed by (rng_seed, stream), which makes
batched sampling equal an element-wise loop over per-example streams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import rng
from .graph import EntityGraph, NodeRef
from .store import SENTINEL_STATIC

STRATEGIES = ("uniform", "ordered", "biased")


@dataclass(frozen=True)
class SamplerConfig:
    hops: int
    fanouts: tuple[int, ...]
    strategy: str = "uniform"
    half_life: float | None = None  # seconds, biased only
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "fanouts", tuple(int(m) for m in self.fanouts))
        if self.hops < 1:
            raise ValueError("need at least one hop")
        if len(self.fanouts) != self.hops:
            raise ValueError(f"{self.hops} hops need {self.hops} fanouts, got {len(self.fanouts)}")
        if any(m < 1 for m in self.fanouts):
            raise ValueError("fanouts must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "biased" and not (self.half_life and self.half_life > 0):
            raise ValueError("biased sampling needs a positive half_life")


class SampledNode(NamedTuple):
    table: str
    local_id: int
    hop: int
    time: int


@dataclass
class ComputationGraph:
    seed: NodeRef
    seed_time: int
    nodes: list[SampledNode]
    edges: list[tuple[int, int, str]]  # (src node index, dst node index, edge type)
    index: dict[tuple[str, int], int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {(n.table, n.local_id): i for i, n in enumerate(self.nodes)}

    def node_count(self) -> int:
        return len(self.nodes)

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": {"table": self.seed.table, "local_id": self.seed.local_id},
                "seed_time": self.seed_time,
                "nodes": [
                    {"table": n.table, "local_id": n.local_id, "hop": n.hop, "time": n.time}
                    for n in self.nodes
                ],
                "edges": [{"src": s, "dst": d, "type": t} for s, d, t in self.edges],
            }
        )


def biased_weights(times: np.ndarray, t: int, half_life: float) -> np.ndarray:
    """Selection probabilities proportional to 2**(-(t - tau) / half_life).

    Static entries (tau = -inf) are given the oldest finite age present; if
    every entry is static the distribution is uniform. Normalized to sum 1.
    """
    times = np.asarray(times, dtype=np.int64)
    if times.size == 0:
        raise ValueError("no times to weight")
    static = times == SENTINEL_STATIC
    ages = np.where(static, 0, t - times).astype(np.float64)
    if static.any():
        ages[static] = ages[~static].max() if (~static).any() else 0.0
    # Shift by the minimum age: the normalized weights are unchanged and the
    # exponent stays small enough to never underflow to an all-zero vector.
    ages -= ages.min()
    weights = np.exp2(-ages / float(half_life))
    return weights / weights.sum()


def _select(adj, local_id: int, t: int, m: int, strategy: str, half_life, gen_box, seed_key) -> np.ndarray:
    """Select at most m neighbors from the time-valid prefix of one list."""
    lo, cut = adj.prefix_bounds(local_id, t)
    k = cut - lo
    if k == 0:
        return _EMPTY
    if k <= m:
        return adj.indices[lo:cut]
    if strategy == "ordered":
        return adj.indices[cut - m : cut]
    gen = gen_box[0]
    if gen is None:  # created lazily so fully-degenerate samples draw nothing
        gen = gen_box[0] = rng.stream(*seed_key)
    if strategy == "uniform":
        picked = gen.choice(k, size=m, replace=False)
    else:
        weights = biased_weights(adj.times[lo:cut], t, half_life)
        # Extreme age/half_life ratios can underflow some weights to zero;
        # a tiny floor keeps m distinct candidates drawable without
        # measurably changing the distribution.
        if np.count_nonzero(weights) < m:
            weights = np.maximum(weights, 1e-12)
            weights /= weights.sum()
        picked = gen.choice(k, size=m, replace=False, p=weights)
    picked.sort()
    return adj.indices[lo + picked]


_EMPTY = np.zeros(0, dtype=np.int64)


def sample(g: EntityGraph, seed: NodeRef, t: int, cfg: SamplerConfig, stream: int = 0) -> ComputationGraph:
    """Expand a computation graph around ``seed`` at seed time ``t``.

    Every sampled node satisfies tau <= t; a seed timestamped after ``t`` is
    rejected outright since no output could honor that guarantee. Nodes are
    stored once at the hop where they were first gathered; edges accumulate
    across hops with duplicates removed. Deterministic given
    (rng_seed, stream).
    """
    if g.table_sizes.get(seed.table) is None:
        raise KeyError(f"unknown table {seed.table!r}")
    if not (0 <= seed.local_id < g.table_sizes[seed.table]):
        raise IndexError(f"{seed.table!r} has no row {seed.local_id}")
    if g.node_time(seed) > t:
        raise ValueError(
            f"seed {seed.table}/{seed.local_id} is timestamped after the seed time; "
            "sampling it would leak the future"
        )

    strategy = cfg.strategy
    half_life = cfg.half_life
    seed_key = (cfg.rng_seed, stream)
    gen_box = [None]

    nodes = [SampledNode(seed.table, seed.local_id, 0, g.node_time(seed))]
    index = {(seed.table, seed.local_id): 0}
    edges: list[tuple[int, int, str]] = []
    edge_seen: set[tuple[int, int, str]] = set()
    incoming = g.incoming
    node_times = g.node_times

    frontier = [(seed.table, seed.local_id)]
    for hop in range(cfg.hops):
        m = cfg.fanouts[hop]
        gathered: dict[tuple[str, int], None] = {}
        for table, local in frontier:
            v_idx = index[(table, local)]
            for adj in incoming[table]:
                sel = _select(adj, local, t, m, strategy, half_life, gen_box, seed_key)
                if sel.size == 0:
                    continue
                src = adj.edge_type.src
                type_name = adj.edge_type.name
                src_times = node_times[src]
                for w in sel:
                    w = int(w)
                    key = (src, w)
                    w_idx = index.get(key)
                    if w_idx is None:
                        w_idx = len(nodes)
                        index[key] = w_idx
                        nodes.append(SampledNode(src, w, hop + 1, int(src_times[w])))
                    edge = (w_idx, v_idx, type_name)
                    if edge not in edge_seen:
                        edge_seen.add(edge)
                        edges.append(edge)
                    gathered[key] = None
        frontier = list(gathered)
        if not frontier:
            break
    return ComputationGraph(seed, t, nodes, edges, index)


def sample_batch(
    g: EntityGraph,
    examples: list[tuple[NodeRef, int]],
    cfg: SamplerConfig,
    first_stream: int = 0,
) -> list[ComputationGraph]:
    """Element-wise sampling with per-example streams first_stream + i."""
    return [sample(g, ref, t, cfg, stream=first_stream + i) for i, (ref, t) in enumerate(examples)]


def node_budget(cfg: SamplerConfig, n_edge_types: int) -> int:
    """Worst-case node count: 1 + sum_i prod_{j<=i} (m_j * |edge types|)."""
    total, layer = 1, 1
    for m in cfg.fanouts:
        layer *= m * n_edge_types
        total += layer
    return total
