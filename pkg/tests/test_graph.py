"""Entity graph: edge construction, time-filtered neighbor queries, snapshots."""

import json

import numpy as np
import pytest

from relgraph.graph import (
    NodeRef,
    build_entity_graph,
    degree_histogram,
    graphs_equal,
    load_graph,
    neighbors_before,
    save_graph,
)
from relgraph.schema import build_schema_graph
from relgraph.store import SENTINEL_STATIC, load_database
from relgraph.synth import SynthConfig, generate
from conftest import TRANSACTIONS, write_ecommerce


@pytest.fixture
def shop_graph(ecommerce_db):
    return ecommerce_db, build_entity_graph(ecommerce_db, build_schema_graph(ecommerce_db))


def brute_force_neighbors(db, v_table, v_local, edge_type, t):
    """Exhaustive scan over all fk cells; the oracle for neighbors_before."""
    out = []
    for link in db.links:
        fwd_name = f"{link.fkey_table}__{link.fk_column}__{link.pkey_table}"
        inv_name = f"{link.pkey_table}__rev_{link.fk_column}__{link.fkey_table}"
        fk_table = db.table(link.fkey_table)
        for i in range(fk_table.n_rows):
            ref = fk_table.fk_refs[link.fk_column][i]
            if ref < 0:
                continue
            # forward edge: fk row -> referenced row
            if edge_type == fwd_name and link.pkey_table == v_table and ref == v_local:
                if fk_table.times[i] <= t:
                    out.append((link.fkey_table, i))
            if edge_type == inv_name and link.fkey_table == v_table and i == v_local:
                target = db.table(link.pkey_table)
                if target.times[ref] <= t:
                    out.append((link.pkey_table, int(ref)))
    return sorted(out)


def test_node_and_edge_counts(shop_graph):
    db, g = shop_graph
    # 2 customers + 2 products + 3 transactions, each txn holds 2 non-null fks
    assert g.n_nodes == 7
    assert g.n_edges == 12


def test_null_fk_emits_no_edge(tmp_path):
    rows = TRANSACTIONS[:3] + ["t3,c2,,10.0,1970-01-01T00:00:30"]
    manifest = write_ecommerce(tmp_path, transactions=rows)
    db = load_database(manifest, tmp_path)
    g = build_entity_graph(db, build_schema_graph(db))
    assert g.n_edges == 10  # 2 fks on t1/t2, customer-only on t3, times 2 directions
    t3 = db.table("transactions").key_to_id["t3"]
    assert neighbors_before(g, NodeRef("transactions", t3), "products__rev_product_id__transactions", 100) == []
    assert len(neighbors_before(g, NodeRef("transactions", t3), "customers__rev_customer_id__transactions", 100)) == 1


def test_dimension_nodes_are_static(shop_graph):
    _, g = shop_graph
    assert np.all(g.node_times["customers"] == SENTINEL_STATIC)
    assert np.all(g.node_times["products"] == SENTINEL_STATIC)


def test_neighbor_lists_time_sorted(shop_graph):
    _, g = shop_graph
    for adj in g.adjacency.values():
        for v in range(len(adj.indptr) - 1):
            times = adj.times[adj.indptr[v] : adj.indptr[v + 1]]
            assert np.all(np.diff(times) >= 0)


def test_neighbors_before_inclusive_boundary(shop_graph):
    db, g = shop_graph
    c1 = db.table("customers").key_to_id["c1"]
    # c1's transactions occur at times 10 and 20; t=20 includes both (<=)
    refs = neighbors_before(g, NodeRef("customers", c1), "transactions__customer_id__customers", 20)
    times = [g.node_time(r) for r in refs]
    assert times == [10, 20]


def test_neighbors_before_nothing_yet(shop_graph):
    db, g = shop_graph
    c1 = db.table("customers").key_to_id["c1"]
    refs = neighbors_before(g, NodeRef("customers", c1), "transactions__customer_id__customers", 5)
    assert refs == []


def test_static_neighbors_always_pass(shop_graph):
    db, g = shop_graph
    t1 = db.table("transactions").key_to_id["t1"]
    refs = neighbors_before(g, NodeRef("transactions", t1), "products__rev_product_id__transactions", -10**12)
    assert len(refs) == 1  # the product is static, passes any cutoff


def test_neighbors_before_wrong_table_errors(shop_graph):
    _, g = shop_graph
    with pytest.raises(ValueError, match="does not point at"):
        neighbors_before(g, NodeRef("products", 0), "transactions__customer_id__customers", 10)
    with pytest.raises(KeyError):
        neighbors_before(g, NodeRef("products", 0), "nope", 10)


def test_neighbors_match_brute_force_on_random_graph(tmp_path):
    cfg = SynthConfig(n_customers=40, n_products=12, n_transactions=300, t_start=0, t_end=10**6, rng_seed=3)
    manifest = generate(cfg, tmp_path)
    db = load_database(manifest, tmp_path)
    g = build_entity_graph(db, build_schema_graph(db))
    gen = np.random.default_rng(0)
    names = list(g.adjacency.keys())
    for _ in range(60):
        name = names[gen.integers(len(names))]
        adj = g.adjacency[name]
        table = adj.edge_type.dst
        local = int(gen.integers(g.table_sizes[table]))
        t = int(gen.integers(0, 10**6))
        got = sorted((r.table, r.local_id) for r in neighbors_before(g, NodeRef(table, local), name, t))
        assert got == brute_force_neighbors(db, table, local, name, t)


def test_edge_symmetry(shop_graph):
    db, g = shop_graph
    horizon = 100
    for et in g.schema.edge_types:
        if not et.forward:
            continue
        inv = et.inverse()
        fwd_pairs = set()
        for v in range(g.table_sizes[et.dst]):
            for w in neighbors_before(g, NodeRef(et.dst, v), et.name, horizon):
                fwd_pairs.add((w.local_id, v))
        inv_pairs = set()
        for v in range(g.table_sizes[inv.dst]):
            for w in neighbors_before(g, NodeRef(inv.dst, v), inv.name, horizon):
                inv_pairs.add((v, w.local_id))
        assert fwd_pairs == inv_pairs


def test_binary_search_equals_linear_filter(shop_graph):
    _, g = shop_graph
    for name, adj in g.adjacency.items():
        for v in range(len(adj.indptr) - 1):
            for t in (-50, 5, 10, 15, 25, 30, 99):
                lo, cut = adj.prefix_bounds(v, t)
                linear = [
                    i for i in range(adj.indptr[v], adj.indptr[v + 1]) if adj.times[i] <= t
                ]
                assert list(range(lo, cut)) == linear


def test_degree_histogram_against_scan(tmp_path):
    # three transactions all by one customer, a second customer with none
    rows = [
        TRANSACTIONS[0],
        "t1,c1,p1,10.0,1970-01-01T00:00:10",
        "t2,c1,p2,20.0,1970-01-01T00:00:20",
        "t3,c1,p1,10.0,1970-01-01T00:00:30",
    ]
    manifest = write_ecommerce(tmp_path, transactions=rows)
    db = load_database(manifest, tmp_path)
    g = build_entity_graph(db, build_schema_graph(db))
    hist = degree_histogram(g, "transactions__customer_id__customers")
    assert hist == {0: 1, 3: 1}
    # one-to-one relation: each transaction has exactly one customer
    assert degree_histogram(g, "customers__rev_customer_id__transactions") == {1: 3}


def test_degree_histogram_empty_relation(tmp_path):
    rows = [TRANSACTIONS[0]]
    manifest = write_ecommerce(tmp_path, transactions=rows)
    db = load_database(manifest, tmp_path)
    g = build_entity_graph(db, build_schema_graph(db))
    assert degree_histogram(g, "transactions__customer_id__customers") == {0: 2}


def test_self_referencing_table(tmp_path):
    (tmp_path / "employees.csv").write_text(
        "employee_id,manager_id\ne1,\ne2,e1\ne3,e1\n", encoding="utf-8"
    )
    doc = {
        "tables": [
            {"name": "employees", "file": "employees.csv", "columns": [
                {"name": "employee_id", "kind": "primary_key"},
                {"name": "manager_id", "kind": "foreign_key", "target": "employees"}]}
        ]
    }
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps(doc), encoding="utf-8")
    db = load_database(manifest, tmp_path)
    g = build_entity_graph(db, build_schema_graph(db))
    assert g.n_edges == 4  # two non-null manager cells, forward and inverse
    e1 = db.table("employees").key_to_id["e1"]
    reports = neighbors_before(g, NodeRef("employees", e1), "employees__manager_id__employees", 0)
    assert len(reports) == 2


def test_determinism_bit_identical(ecommerce_dir):
    manifest, directory = ecommerce_dir
    g1 = build_entity_graph(load_database(manifest, directory), build_schema_graph(load_database(manifest, directory)))
    g2 = build_entity_graph(load_database(manifest, directory), build_schema_graph(load_database(manifest, directory)))
    assert graphs_equal(g1, g2)


def test_snapshot_round_trip(tmp_path, shop_graph):
    _, g = shop_graph
    path = tmp_path / "graph.bin"
    save_graph(g, path)
    again = load_graph(path)
    assert graphs_equal(g, again)
    assert again.keys["customers"] == ["c1", "c2"]
