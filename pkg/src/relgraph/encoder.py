"""Deterministic multi-modal row encoders producing initial node embeddings.

Each table gets a raw feature layout: a constant bias slot, then per
attribute column

* numerical    -> (standardized value, missing flag); missing cells encode
                  as value 0 with the flag set, never as a silent zero,
* categorical  -> one-hot over the fitted vocabulary plus an out-of-vocab
                  bucket (unseen and null values land there),
* text         -> L2-normalized hashed character-3-gram counts (FNV-1a 64,
                  pinned, so the vector depends only on the string's bytes
                  and the declared dimension).

Statistics and vocabularies are fitted only on rows with timestamp at or
before the cutoff, so rows after it can never influence the encoding. The
fused embedding is ``fusion @ raw``; the fusion matrix is a model parameter
(the trainer starts from the copy initialized here) while the raw layout
and statistics stay frozen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import binio, rng
from .store import Database, Row, Table

STD_FLOOR = 1e-9


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash; the pinned hash behind text feature bucketing."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _char_ngrams(text: str, n: int = 3) -> list[str]:
    if len(text) < n:
        return [text] if text else []
    return [text[i : i + n] for i in range(len(text) - n + 1)]


def hashed_text_vector(text: str | None, dim: int) -> np.ndarray:
    """Bucketed character-3-gram counts, L2 normalized; null text is all zero."""
    vec = np.zeros(dim, dtype=np.float64)
    if not text:
        return vec
    for gram in _char_ngrams(text):
        vec[fnv1a64(gram.encode("utf-8")) % dim] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


@dataclass
class ColumnLayout:
    column: str
    kind: str
    offset: int
    width: int


class RowEncoder(BaseEstimator):
    """Fits per-table statistics and encodes rows to fixed-size vectors.

    Parameters
    ----------
    out_dim : embedding size per table (overridable per table via table_dims)
    text_dim : bucket count for hashed text features
    table_dims : optional {table: out_dim} overrides
    seed : seed for the fusion-matrix initialization
    """

    def __init__(self, out_dim: int = 64, text_dim: int = 16, table_dims: dict | None = None, seed: int = 0):
        self.out_dim = out_dim
        self.text_dim = text_dim
        self.table_dims = table_dims
        self.seed = seed

    def _dim_for(self, table: str) -> int:
        if self.table_dims and table in self.table_dims:
            return int(self.table_dims[table])
        return int(self.out_dim)

    def fit(self, db: Database, t_cut: int):
        """Compute statistics and vocabularies from rows with tau <= t_cut."""
        self.layout_: dict[str, list[ColumnLayout]] = {}
        self.raw_dim_: dict[str, int] = {}
        self.dims_: dict[str, int] = {}
        self.num_stats_: dict[tuple[str, str], tuple[float, float]] = {}
        self.cat_vocab_: dict[tuple[str, str], dict[str, int]] = {}
        self.fusion_: dict[str, np.ndarray] = {}
        self.t_cut_ = int(t_cut)
        self._raw_cache: dict[str, np.ndarray] = {}

        gen = rng.stream(self.seed, rng.PARAM_INIT_STREAM)
        for name, table in db.tables.items():
            eligible = table.times <= t_cut
            layout = [ColumnLayout("", "bias", 0, 1)]
            offset = 1
            for col in table.attribute_columns:
                if col.kind == "numerical":
                    width = 2
                    values = table.num_values[col.name]
                    ok = eligible & ~table.num_missing[col.name]
                    if ok.any():
                        mean = float(values[ok].mean())
                        std = max(float(values[ok].std()), STD_FLOOR)
                    else:
                        mean, std = 0.0, 1.0
                    self.num_stats_[(name, col.name)] = (mean, std)
                elif col.kind == "categorical":
                    cells = table.cat_values[col.name]
                    seen = sorted({c for c, e in zip(cells, eligible) if e and c is not None})
                    self.cat_vocab_[(name, col.name)] = {v: i for i, v in enumerate(seen)}
                    width = len(seen) + 1  # trailing out-of-vocab bucket
                else:
                    width = self.text_dim
                layout.append(ColumnLayout(col.name, col.kind, offset, width))
                offset += width
            self.layout_[name] = layout
            self.raw_dim_[name] = offset
            self.dims_[name] = self._dim_for(name)
            a = np.sqrt(6.0 / (offset + self.dims_[name]))
            self.fusion_[name] = gen.uniform(-a, a, size=(self.dims_[name], offset))
        return self

    def raw_row(self, table: Table, local_id: int) -> np.ndarray:
        """Pre-fusion feature vector for one row."""
        check_is_fitted(self, "layout_")
        vec = np.zeros(self.raw_dim_[table.name], dtype=np.float64)
        vec[0] = 1.0
        for part in self.layout_[table.name][1:]:
            if part.kind == "numerical":
                if table.num_missing[part.column][local_id]:
                    vec[part.offset + 1] = 1.0
                else:
                    mean, std = self.num_stats_[(table.name, part.column)]
                    vec[part.offset] = (float(table.num_values[part.column][local_id]) - mean) / std
            elif part.kind == "categorical":
                vocab = self.cat_vocab_[(table.name, part.column)]
                value = table.cat_values[part.column][local_id]
                idx = vocab.get(value, len(vocab)) if value is not None else len(vocab)
                vec[part.offset + idx] = 1.0
            else:
                text = table.text_values[part.column][local_id]
                vec[part.offset : part.offset + part.width] = hashed_text_vector(text, part.width)
        return vec

    def raw_matrix(self, table: Table, local_ids: np.ndarray | None = None) -> np.ndarray:
        """Raw features for many rows; the full per-table matrix is cached.

        The cache is keyed by the table object (not its name), so the same
        encoder can serve several databases sharing a schema.
        """
        check_is_fitted(self, "layout_")
        entry = self._raw_cache.get(id(table))
        if entry is None or entry[0] is not table:
            matrix = np.stack([self.raw_row(table, i) for i in range(table.n_rows)]) \
                if table.n_rows else np.zeros((0, self.raw_dim_[table.name]))
            self._raw_cache[id(table)] = (table, matrix)
        else:
            matrix = entry[1]
        return matrix if local_ids is None else matrix[np.asarray(local_ids, dtype=np.int64)]

    def encode_row(self, table: Table, row: Row | int) -> np.ndarray:
        """Fused embedding of a row under this encoder's fusion matrix."""
        local_id = row.local_id if isinstance(row, Row) else int(row)
        if isinstance(row, Row) and row.table != table.name:
            raise ValueError(f"row belongs to {row.table!r}, not {table.name!r}")
        return self.fusion_[table.name] @ self.raw_row(table, local_id)

    def transform(self, db: Database, refs: list) -> np.ndarray:
        """Fused embeddings for a list of (table, local_id) refs; dims must agree."""
        check_is_fitted(self, "layout_")
        dims = {self.dims_[t] for t, _ in refs}
        if len(dims) > 1:
            raise ValueError("mixed output dims; encode per table instead")
        return np.stack([self.encode_row(db.table(t), i) for t, i in refs])

    def save(self, path) -> None:
        check_is_fitted(self, "layout_")
        meta = {
            "params": {
                "out_dim": self.out_dim,
                "text_dim": self.text_dim,
                "table_dims": self.table_dims,
                "seed": self.seed,
            },
            "t_cut": self.t_cut_,
            "layout": {
                t: [{"column": p.column, "kind": p.kind, "offset": p.offset, "width": p.width} for p in parts]
                for t, parts in self.layout_.items()
            },
            "raw_dim": self.raw_dim_,
            "dims": self.dims_,
            "num_stats": {json.dumps(k): v for k, v in self.num_stats_.items()},
            "cat_vocab": {json.dumps(k): v for k, v in self.cat_vocab_.items()},
        }
        binio.write_container(path, "row_encoder", meta, {f"fusion::{t}": m for t, m in self.fusion_.items()})

    @classmethod
    def load(cls, path) -> "RowEncoder":
        meta, arrays = binio.read_container(path, kind="row_encoder")
        enc = cls(**meta["params"])
        enc.t_cut_ = meta["t_cut"]
        enc.layout_ = {
            t: [ColumnLayout(p["column"], p["kind"], p["offset"], p["width"]) for p in parts]
            for t, parts in meta["layout"].items()
        }
        enc.raw_dim_ = {t: int(v) for t, v in meta["raw_dim"].items()}
        enc.dims_ = {t: int(v) for t, v in meta["dims"].items()}
        enc.num_stats_ = {tuple(json.loads(k)): tuple(v) for k, v in meta["num_stats"].items()}
        enc.cat_vocab_ = {tuple(json.loads(k)): v for k, v in meta["cat_vocab"].items()}
        enc.fusion_ = {name.split("::", 1)[1]: arr for name, arr in arrays.items()}
        enc._raw_cache = {}
        return enc


def fit_encoders(db: Database, t_cut: int, **params) -> RowEncoder:
    """Fit a :class:`RowEncoder` on rows with tau <= t_cut."""
    return RowEncoder(**params).fit(db, t_cut)


def encode_row(state: RowEncoder, table: Table, row: Row | int) -> np.ndarray:
    return state.encode_row(table, row)
