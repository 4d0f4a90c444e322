"""Seeded synthetic e-commerce database with a tunable predictive signal.

Three tables: static customers, static products, timestamped transactions
(customer fk, product fk, price copied from the product). Each customer
carries a latent activity profile: a decay strength drawn once per customer
and a phase. Event placement blends two sources controlled by
``signal_strength`` s:

* a deterministic schedule: round(s * n_transactions) events split evenly
  across customers and placed at the quantiles of a per-customer truncated
  exponential, so stronger decay bunches a customer's purchases early and
  future inactivity is a deterministic function of the latent state;
* background noise: the remaining events get an independent uniform
  (customer, time) each, i.e. no customer's history says anything about
  their future.

At s=1 everything is scheduled (churn in any window is determined by the
latents); at s=0 everything is noise (no classifier can beat the label
prevalence). Scheduled events also prefer one of two product pools with
probability equal to the customer's normalized decay, and the pools carry
distinct description tokens, so the decay profile is recoverable by
aggregating product attributes over a customer's transaction history.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .store import format_time, parse_time

DECAY_LO = 1.0
DECAY_HI = 8.0

_ADJ = ["amber", "brisk", "coral", "dusky", "expert", "faded", "grand", "humble", "ivory", "jade"]
_NOUN = ["lamp", "mug", "chair", "scarf", "kettle", "journal", "basket", "clock", "blanket", "frame"]
_POOL_TOKENS = (["anchor", "granite", "steady"], ["drift", "ember", "fleeting"])
_FIRST = ["ada", "bela", "cruz", "dana", "edel", "fuma", "gal", "hoshi", "ines", "jody"]
_LAST = ["ahn", "brand", "calle", "demir", "egede", "fall", "goto", "haas", "iman", "juma"]
_REGIONS = ["north", "south", "east", "west"]
_SIZES = ["small", "medium", "large"]


@dataclass(frozen=True)
class SynthConfig:
    n_customers: int
    n_products: int
    n_transactions: int
    t_start: int
    t_end: int
    signal_strength: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.n_customers, self.n_products, self.n_transactions) <= 0:
            raise ValueError("counts must be positive")
        if self.t_start >= self.t_end:
            raise ValueError("t_start must precede t_end")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")

    @property
    def horizon(self) -> int:
        return self.t_end - self.t_start


def synth_config_from_json(doc: dict | str | Path) -> SynthConfig:
    if not isinstance(doc, dict):
        doc = json.loads(Path(doc).read_text(encoding="utf-8"))
    return SynthConfig(
        n_customers=int(doc["n_customers"]),
        n_products=int(doc["n_products"]),
        n_transactions=int(doc["n_transactions"]),
        t_start=parse_time(str(doc["t_start"])),
        t_end=parse_time(str(doc["t_end"])),
        signal_strength=float(doc.get("signal_strength", 1.0)),
        rng_seed=int(doc.get("rng_seed", 0)),
    )


def _latents(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-customer (decay, phase, affinity); affinity is decay rescaled to [0, 1]."""
    gen = rng.stream(cfg.rng_seed, rng.SYNTH_STREAM_BASE)
    decay = gen.uniform(DECAY_LO, DECAY_HI, cfg.n_customers)
    phase = gen.random(cfg.n_customers)
    affinity = (decay - DECAY_LO) / (DECAY_HI - DECAY_LO)
    return decay, phase, affinity


def _quotas(cfg: SynthConfig) -> np.ndarray:
    """Scheduled events per customer; total is round(s * n_transactions) exactly."""
    n_det = int(round(cfg.signal_strength * cfg.n_transactions))
    base, rem = divmod(n_det, cfg.n_customers)
    q = np.full(cfg.n_customers, base, dtype=np.int64)
    q[:rem] += 1
    return q


def _scheduled_times(cfg: SynthConfig, decay: float, phase: float, quota: int) -> np.ndarray:
    """Quantile placement under a truncated-exponential activity profile."""
    if quota == 0:
        return np.zeros(0, dtype=np.int64)
    p = (np.arange(quota) + phase) / quota
    mass = 1.0 - np.exp(-decay)
    offsets = -(cfg.horizon / decay) * np.log(1.0 - p * mass)
    times = cfg.t_start + np.floor(offsets).astype(np.int64)
    return np.clip(times, cfg.t_start, cfg.t_end - 1)


def _key(prefix: str, i: int, total: int) -> str:
    return f"{prefix}{i:0{len(str(max(total - 1, 1)))}d}"


def generate(cfg: SynthConfig, out_dir) -> Path:
    """Write customers/products/transactions CSVs plus a manifest; returns the manifest path.

    Deterministic: the same config (seed included) produces byte-identical
    files. Table row counts equal the configured counts exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    decay, phase, affinity = _latents(cfg)
    quotas = _quotas(cfg)

    attr_gen = rng.stream(cfg.rng_seed, rng.SYNTH_STREAM_BASE + 1)
    regions = attr_gen.integers(0, len(_REGIONS), cfg.n_customers)
    first = attr_gen.integers(0, len(_FIRST), cfg.n_customers)
    last = attr_gen.integers(0, len(_LAST), cfg.n_customers)

    prod_gen = rng.stream(cfg.rng_seed, rng.SYNTH_STREAM_BASE + 2)
    prices = np.round(np.exp(prod_gen.uniform(np.log(3.0), np.log(300.0), cfg.n_products)), 2)
    sizes = prod_gen.integers(0, len(_SIZES), cfg.n_products)
    adjs = prod_gen.integers(0, len(_ADJ), cfg.n_products)
    nouns = prod_gen.integers(0, len(_NOUN), cfg.n_products)
    markers = prod_gen.integers(0, len(_POOL_TOKENS[0]), cfg.n_products)
    half = cfg.n_products // 2
    pools = (np.arange(cfg.n_products), np.arange(cfg.n_products))
    if half > 0:
        pools = (np.arange(half), np.arange(half, cfg.n_products))
    pool_of = np.zeros(cfg.n_products, dtype=np.int64)
    pool_of[pools[1]] = 1

    # Scheduled events: decay-shaped times, pool preference tied to affinity.
    pick_gen = rng.stream(cfg.rng_seed, rng.SYNTH_STREAM_BASE + 3)
    times_parts, cust_parts, prod_parts = [], [], []
    for i in range(cfg.n_customers):
        q = int(quotas[i])
        if q == 0:
            continue
        times_parts.append(_scheduled_times(cfg, float(decay[i]), float(phase[i]), q))
        cust_parts.append(np.full(q, i, dtype=np.int64))
        in_b = pick_gen.random(q) < affinity[i]
        slots = pick_gen.integers(0, cfg.n_products, q)  # folded into the chosen pool below
        chosen = np.where(in_b, pools[1][slots % len(pools[1])], pools[0][slots % len(pools[0])])
        prod_parts.append(chosen)

    # Background events: independent uniform (customer, time), uniform product.
    n_iid = cfg.n_transactions - int(quotas.sum())
    iid_gen = rng.stream(cfg.rng_seed, rng.SYNTH_STREAM_BASE + 4)
    if n_iid > 0:
        times_parts.append(cfg.t_start + np.floor(iid_gen.random(n_iid) * cfg.horizon).astype(np.int64))
        cust_parts.append(iid_gen.integers(0, cfg.n_customers, n_iid))
        prod_parts.append(iid_gen.integers(0, cfg.n_products, n_iid))

    times = np.concatenate(times_parts) if times_parts else np.zeros(0, dtype=np.int64)
    custs = np.concatenate(cust_parts) if cust_parts else np.zeros(0, dtype=np.int64)
    prods = np.concatenate(prod_parts) if prod_parts else np.zeros(0, dtype=np.int64)
    order = np.argsort(times, kind="stable")

    with open(out_dir / "customers.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["customer_id", "name", "region"])
        for i in range(cfg.n_customers):
            writer.writerow(
                [_key("c", i, cfg.n_customers), f"{_FIRST[first[i]]} {_LAST[last[i]]}", _REGIONS[regions[i]]]
            )

    with open(out_dir / "products.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["product_id", "description", "price", "size"])
        for j in range(cfg.n_products):
            token = _POOL_TOKENS[pool_of[j]][markers[j]]
            description = f"{token} {_ADJ[adjs[j]]} {_NOUN[nouns[j]]}"
            writer.writerow([_key("p", j, cfg.n_products), description, repr(float(prices[j])), _SIZES[sizes[j]]])

    with open(out_dir / "transactions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["transaction_id", "customer_id", "product_id", "price", "timestamp"])
        for rank, e in enumerate(order):
            writer.writerow(
                [
                    _key("t", rank, cfg.n_transactions),
                    _key("c", int(custs[e]), cfg.n_customers),
                    _key("p", int(prods[e]), cfg.n_products),
                    repr(float(prices[prods[e]])),
                    format_time(int(times[e])),
                ]
            )

    manifest = {
        "tables": [
            {
                "name": "customers",
                "file": "customers.csv",
                "columns": [
                    {"name": "customer_id", "kind": "primary_key"},
                    {"name": "name", "kind": "text"},
                    {"name": "region", "kind": "categorical"},
                ],
            },
            {
                "name": "products",
                "file": "products.csv",
                "columns": [
                    {"name": "product_id", "kind": "primary_key"},
                    {"name": "description", "kind": "text"},
                    {"name": "price", "kind": "numerical"},
                    {"name": "size", "kind": "categorical"},
                ],
            },
            {
                "name": "transactions",
                "file": "transactions.csv",
                "columns": [
                    {"name": "transaction_id", "kind": "primary_key"},
                    {"name": "customer_id", "kind": "foreign_key", "target": "customers"},
                    {"name": "product_id", "kind": "foreign_key", "target": "products"},
                    {"name": "price", "kind": "numerical"},
                    {"name": "timestamp", "kind": "timestamp"},
                ],
            },
        ]
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def scheduled_window_counts(cfg: SynthConfig, t: int, window: int) -> np.ndarray:
    """Per-customer count of scheduled events in (t, t + window], replayed from latents."""
    decay, phase, _ = _latents(cfg)
    quotas = _quotas(cfg)
    counts = np.zeros(cfg.n_customers, dtype=np.int64)
    for i in range(cfg.n_customers):
        times = _scheduled_times(cfg, float(decay[i]), float(phase[i]), int(quotas[i]))
        counts[i] = int(np.count_nonzero((times > t) & (times <= t + window)))
    return counts


def churn_oracle_scores(cfg: SynthConfig, t: int, window: int) -> dict[str, float]:
    """Latent-state churn scores: higher means more likely to have zero events.

    The score is the negated expected event count in the window (scheduled
    events replayed exactly, background events by their constant rate), so
    ranking by it is the "latent activity below threshold" rule.
    """
    counts = scheduled_window_counts(cfg, t, window)
    n_iid = cfg.n_transactions - int(_quotas(cfg).sum())
    background = (n_iid / cfg.n_customers) * (window / cfg.horizon)
    return {
        _key("c", i, cfg.n_customers): -(float(counts[i]) + background)
        for i in range(cfg.n_customers)
    }
