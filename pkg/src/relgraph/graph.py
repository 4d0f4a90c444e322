"""Entity-level temporal heterogeneous graph with time-sorted adjacency.

One node per table row; one forward and one inverse directed edge per
non-null foreign-key cell. Adjacency is stored per edge type in compressed
form (offsets plus neighbor array), keyed by the *destination* node, with
each neighbor list ascending in neighbor timestamp and tie-broken by local
id. Local ids are assigned in (timestamp, primary key) order at load, so
sorting by local id is exactly that order, and the "neighbors available up
to time t" query is a binary-searched prefix of the list.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import binio
from .schema import EdgeType, SchemaGraph
from .store import DANGLING_REF, Database


class NodeRef(NamedTuple):
    table: str
    local_id: int


class Adjacency:
    """Compressed neighbor lists for one edge type, keyed by destination node."""

    def __init__(self, edge_type: EdgeType, indptr: np.ndarray, indices: np.ndarray, times: np.ndarray):
        self.edge_type = edge_type
        self.indptr = indptr          # int64, len n_dst + 1
        self.indices = indices        # int64 local ids in the source table
        self.times = times            # int64 timestamps aligned with indices

    @property
    def n_edges(self) -> int:
        return int(self.indices.size)

    def prefix_bounds(self, local_id: int, t: int) -> tuple[int, int]:
        """Return (lo, cut) delimiting the neighbors with timestamp <= t."""
        lo = int(self.indptr[local_id])
        hi = int(self.indptr[local_id + 1])
        cut = lo + int(np.searchsorted(self.times[lo:hi], t, side="right"))
        return lo, cut


class EntityGraph:
    def __init__(
        self,
        schema: SchemaGraph,
        table_sizes: dict[str, int],
        node_times: dict[str, np.ndarray],
        adjacency: dict[str, Adjacency],
        keys: dict[str, list[str]],
    ):
        self.schema = schema
        self.table_names = list(table_sizes.keys())
        self.table_sizes = table_sizes
        self.node_times = node_times
        self.adjacency = adjacency
        self.keys = keys
        # Per-table incoming relations, precomputed for the sampling hot path.
        self.incoming = {t: [adjacency[et.name] for et in schema.incoming(t)] for t in self.table_names}

    @property
    def n_nodes(self) -> int:
        return sum(self.table_sizes.values())

    @property
    def n_edges(self) -> int:
        return sum(a.n_edges for a in self.adjacency.values())

    def node_time(self, ref: NodeRef) -> int:
        return int(self.node_times[ref.table][ref.local_id])


def build_entity_graph(db: Database, sg: SchemaGraph) -> EntityGraph:
    """Materialize adjacency for every edge type of the schema graph.

    Requires a validated database: dangling references would otherwise leak
    into the edge set. Null foreign keys simply emit no edge.
    """
    table_sizes = {name: t.n_rows for name, t in db.tables.items()}
    node_times = {name: t.times for name, t in db.tables.items()}
    keys = {name: t.keys for name, t in db.tables.items()}

    adjacency: dict[str, Adjacency] = {}
    for et in sg.edge_types:
        if not et.forward:
            continue
        fk_table = db.tables[et.src]
        pk_table = db.tables[et.dst]
        refs = fk_table.fk_refs[et.fk_column]
        if np.any(refs == DANGLING_REF):
            raise ValueError(
                f"table {et.src!r} column {et.fk_column!r} has unresolved references; validate first"
            )
        valid = np.flatnonzero(refs >= 0)
        dst_ids = refs[valid]

        # Forward type: destination = referenced table, neighbors = referencing rows.
        counts = np.bincount(dst_ids, minlength=pk_table.n_rows)
        indptr = np.zeros(pk_table.n_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        order = np.argsort(dst_ids, kind="stable")  # ascending source id within each bucket
        indices = valid[order].astype(np.int64)
        adjacency[et.name] = Adjacency(et, indptr, indices, fk_table.times[indices])

        # Inverse type: destination = referencing table, at most one neighbor per row.
        inv = et.inverse()
        has_ref = (refs >= 0).astype(np.int64)
        inv_indptr = np.zeros(fk_table.n_rows + 1, dtype=np.int64)
        np.cumsum(has_ref, out=inv_indptr[1:])
        inv_indices = dst_ids.astype(np.int64)
        adjacency[inv.name] = Adjacency(inv, inv_indptr, inv_indices, pk_table.times[inv_indices])

    return EntityGraph(sg, table_sizes, node_times, adjacency, keys)


def neighbors_before(g: EntityGraph, v: NodeRef, edge_type: str, t: int) -> list[NodeRef]:
    """All neighbors w of v under ``edge_type`` with tau(w) <= t, ascending in tau.

    Static neighbors (tau = -inf) always pass the filter.
    """
    adj = g.adjacency.get(edge_type)
    if adj is None:
        raise KeyError(f"unknown edge type {edge_type!r}")
    if adj.edge_type.dst != v.table:
        raise ValueError(f"edge type {edge_type!r} does not point at table {v.table!r}")
    lo, cut = adj.prefix_bounds(v.local_id, t)
    src = adj.edge_type.src
    return [NodeRef(src, int(i)) for i in adj.indices[lo:cut]]


def degree_histogram(g: EntityGraph, edge_type: str) -> dict[int, int]:
    """Map in-degree -> number of destination nodes with that degree."""
    adj = g.adjacency.get(edge_type)
    if adj is None:
        raise KeyError(f"unknown edge type {edge_type!r}")
    degrees = np.diff(adj.indptr)
    values, counts = np.unique(degrees, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def save_graph(g: EntityGraph, path) -> None:
    """Write a self-contained binary snapshot (adjacency, times, keys)."""
    meta = {
        "tables": [{"name": t, "size": g.table_sizes[t]} for t in g.table_names],
        "keys": {t: g.keys[t] for t in g.table_names},
        "edge_types": [
            {"src": et.src, "dst": et.dst, "fk": et.fk_column, "forward": et.forward}
            for et in g.schema.edge_types
        ],
    }
    arrays: dict[str, np.ndarray] = {}
    for t in g.table_names:
        arrays[f"times::{t}"] = g.node_times[t].astype(np.int64)
    for name, adj in g.adjacency.items():
        arrays[f"indptr::{name}"] = adj.indptr
        arrays[f"indices::{name}"] = adj.indices
        arrays[f"etimes::{name}"] = adj.times
    binio.write_container(path, "entity_graph", meta, arrays)


def load_graph(path) -> EntityGraph:
    meta, arrays = binio.read_container(path, kind="entity_graph")
    edge_types = [EdgeType(e["src"], e["dst"], e["fk"], e["forward"]) for e in meta["edge_types"]]
    schema = SchemaGraph([t["name"] for t in meta["tables"]], edge_types)
    table_sizes = {t["name"]: t["size"] for t in meta["tables"]}
    node_times = {t["name"]: arrays[f"times::{t['name']}"] for t in meta["tables"]}
    keys = {t: list(k) for t, k in meta["keys"].items()}
    adjacency = {}
    for et in edge_types:
        adjacency[et.name] = Adjacency(
            et, arrays[f"indptr::{et.name}"], arrays[f"indices::{et.name}"], arrays[f"etimes::{et.name}"]
        )
    return EntityGraph(schema, table_sizes, node_times, adjacency, keys)


def graphs_equal(a: EntityGraph, b: EntityGraph) -> bool:
    if a.schema != b.schema or a.table_sizes != b.table_sizes:
        return False
    for t in a.table_names:
        if not np.array_equal(a.node_times[t], b.node_times[t]):
            return False
    for name, adj in a.adjacency.items():
        other = b.adjacency.get(name)
        if other is None:
            return False
        if not (
            np.array_equal(adj.indptr, other.indptr)
            and np.array_equal(adj.indices, other.indices)
            and np.array_equal(adj.times, other.times)
        ):
            return False
    return True
