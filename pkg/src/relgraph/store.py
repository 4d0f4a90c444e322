"""Load, validate and serialize multi-table relational databases.

A database is described by a JSON manifest::

    {"tables": [{"name": ..., "file": ..., "columns": [
        {"name": ..., "kind": ..., "target"?: ..., "nullable"?: true}]}]}

with ``kind`` one of ``primary_key``, ``foreign_key`` (plus ``target``),
``numerical``, ``categorical``, ``text``, ``timestamp``. Data files are
RFC-4180 CSV, UTF-8, mandatory header row, empty string meaning null.

Rows of each table are sorted by (timestamp, primary key) at load and
assigned dense 0-based local ids in that order, so a table's timestamps are
non-decreasing in local id. Rows of tables without a timestamp column get
the sentinel :data:`SENTINEL_STATIC`, which stands for "minus infinity":
static rows are considered available at every point in time.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

#: Timestamp of rows in tables without a timestamp column (stands for -inf).
SENTINEL_STATIC = np.iinfo(np.int64).min

#: Resolved foreign-key id for a null cell (emits no edge downstream).
NULL_REF = -1
#: Resolved foreign-key id for a dangling reference (lax loading only).
DANGLING_REF = -2

COLUMN_KINDS = ("primary_key", "foreign_key", "numerical", "categorical", "text", "timestamp")
ATTRIBUTE_KINDS = ("numerical", "categorical", "text")


class StoreError(Exception):
    """Base class for relational-store failures."""


class ManifestError(StoreError):
    """Malformed or inconsistent schema manifest."""


class DataFileError(StoreError):
    """Missing data file or bad CSV structure."""


class CellError(StoreError):
    """A cell failed to parse; reports table, row and column."""

    def __init__(self, table: str, row: int, column: str, message: str):
        super().__init__(f"table {table!r}, row {row}, column {column!r}: {message}")
        self.table = table
        self.row = row
        self.column = column


class IntegrityError(StoreError):
    """Duplicate primary key or unresolvable foreign key."""


def parse_time(text: str) -> int:
    """Parse an ISO-8601 date/datetime (or plain integer) to epoch seconds.

    Naive datetimes are taken as UTC. A trailing ``Z`` is accepted.
    """
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    stripped = text[1:] if text[0] in "+-" else text
    if stripped.isdigit():
        return int(text)
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise ValueError(f"not an ISO-8601 timestamp: {text!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_time(epoch: int) -> str:
    """Render epoch seconds as a UTC ISO-8601 string (inverse of parse_time)."""
    dt = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S")


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    target: str | None = None  # foreign_key only
    nullable: bool = True

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise ManifestError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "foreign_key" and not self.target:
            raise ManifestError(f"foreign key column {self.name!r} is missing a target table")
        if self.kind != "foreign_key" and self.target is not None:
            raise ManifestError(f"column {self.name!r}: target only makes sense for foreign keys")


@dataclass
class Row:
    """Materialized view of one table row."""

    table: str
    local_id: int
    key: str
    foreign_keys: dict[str, str | None]
    attributes: dict[str, object]
    time: int


class Table:
    """Columnar storage for one table; immutable after load."""

    def __init__(self, name: str, spec: list[ColumnSpec]):
        self.name = name
        self.spec = spec
        pk = [c for c in spec if c.kind == "primary_key"]
        ts = [c for c in spec if c.kind == "timestamp"]
        if len({c.name for c in spec}) != len(spec):
            raise ManifestError(f"table {name!r} declares duplicate column names")
        if len(pk) != 1:
            raise ManifestError(f"table {name!r} must declare exactly one primary_key column")
        if len(ts) > 1:
            raise ManifestError(f"table {name!r} declares more than one timestamp column")
        self.pk_column = pk[0].name
        self.time_column = ts[0].name if ts else None
        self.fk_columns = [c for c in spec if c.kind == "foreign_key"]
        self.attribute_columns = [c for c in spec if c.kind in ATTRIBUTE_KINDS]

        self.n_rows = 0
        self.keys: list[str] = []
        self.key_to_id: dict[str, int] = {}
        self.times = np.zeros(0, dtype=np.int64)
        self.fk_refs: dict[str, np.ndarray] = {}
        self.fk_raw: dict[str, list] = {}
        self.num_values: dict[str, np.ndarray] = {}
        self.num_missing: dict[str, np.ndarray] = {}
        self.cat_values: dict[str, list] = {}
        self.text_values: dict[str, list] = {}
        self.duplicate_keys: list[str] = []

    @property
    def is_static(self) -> bool:
        return self.time_column is None

    @property
    def arity(self) -> int:
        """Number of attribute columns (d_T)."""
        return len(self.attribute_columns)

    def row(self, local_id: int) -> Row:
        attrs = {}
        for col in self.attribute_columns:
            if col.kind == "numerical":
                miss = self.num_missing[col.name][local_id]
                attrs[col.name] = None if miss else float(self.num_values[col.name][local_id])
            elif col.kind == "categorical":
                attrs[col.name] = self.cat_values[col.name][local_id]
            else:
                attrs[col.name] = self.text_values[col.name][local_id]
        fks = {c.name: self.fk_raw[c.name][local_id] for c in self.fk_columns}
        return Row(self.name, local_id, self.keys[local_id], fks, attrs, int(self.times[local_id]))

    def rows(self):
        return (self.row(i) for i in range(self.n_rows))


@dataclass(frozen=True)
class Link:
    """One foreign-key relationship: fkey_table.fk_column -> pkey_table."""

    fkey_table: str
    fk_column: str
    pkey_table: str


class Database:
    def __init__(self, tables: dict[str, Table], links: list[Link]):
        self.tables = tables
        self.links = links

    def table(self, name: str) -> Table:
        try:
            return self.tables[name]
        except KeyError:
            raise KeyError(f"unknown table {name!r}") from None

    def min_time(self) -> int | None:
        """Earliest finite timestamp across all tables (None if all static)."""
        lo = None
        for t in self.tables.values():
            finite = t.times[t.times != SENTINEL_STATIC]
            if finite.size:
                m = int(finite.min())
                lo = m if lo is None else min(lo, m)
        return lo

    def max_time(self) -> int | None:
        hi = None
        for t in self.tables.values():
            finite = t.times[t.times != SENTINEL_STATIC]
            if finite.size:
                m = int(finite.max())
                hi = m if hi is None else max(hi, m)
        return hi


def _parse_manifest(manifest_path) -> list[dict]:
    try:
        raw = Path(manifest_path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {manifest_path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("tables"), list):
        raise ManifestError(f"manifest {manifest_path} must be an object with a 'tables' list")
    return doc["tables"]


def _column_specs(entry: dict) -> list[ColumnSpec]:
    specs = []
    for col in entry.get("columns", []):
        specs.append(
            ColumnSpec(
                name=col["name"],
                kind=col.get("kind", ""),
                target=col.get("target"),
                nullable=bool(col.get("nullable", True)),
            )
        )
    return specs


def _read_csv_columns(path: Path, table: str, columns: list[ColumnSpec]) -> dict[str, list]:
    if not path.exists():
        raise DataFileError(f"table {table!r}: data file {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFileError(f"table {table!r}: {path} is empty (header row is mandatory)")
        declared = [c.name for c in columns]
        if sorted(header) != sorted(declared):
            raise DataFileError(
                f"table {table!r}: header {header} does not match declared columns {declared}"
            )
        idx = {name: header.index(name) for name in declared}
        cells: dict[str, list] = {name: [] for name in declared}
        for rownum, record in enumerate(reader):
            if len(record) != len(header):
                raise DataFileError(
                    f"table {table!r}: row {rownum} has {len(record)} fields, expected {len(header)}"
                )
            for name in declared:
                cells[name].append(record[idx[name]])
    return cells


def _build_table(name: str, spec: list[ColumnSpec], cells: dict[str, list], strict: bool) -> Table:
    table = Table(name, spec)
    n = len(cells[table.pk_column]) if cells else 0

    # Parse primary keys and timestamps first; they define the row order.
    keys_in = cells[table.pk_column]
    for i, key in enumerate(keys_in):
        if key == "":
            raise CellError(name, i, table.pk_column, "primary key must not be null")
    if table.time_column is not None:
        times_in = []
        for i, cell in enumerate(cells[table.time_column]):
            if cell == "":
                raise CellError(name, i, table.time_column, "timestamp must not be null")
            try:
                times_in.append(parse_time(cell))
            except ValueError as exc:
                raise CellError(name, i, table.time_column, str(exc)) from exc
    else:
        times_in = [SENTINEL_STATIC] * n

    order = sorted(range(n), key=lambda i: (times_in[i], keys_in[i]))

    table.n_rows = n
    table.keys = [keys_in[i] for i in order]
    table.times = np.array([times_in[i] for i in order], dtype=np.int64)
    for local, key in enumerate(table.keys):
        if key in table.key_to_id:
            if strict:
                raise IntegrityError(f"table {name!r}: duplicate primary key {key!r}")
            table.duplicate_keys.append(key)
        else:
            table.key_to_id[key] = local

    for col in table.fk_columns:
        raw = [cells[col.name][i] or None for i in order]
        table.fk_raw[col.name] = raw
        table.fk_refs[col.name] = np.full(n, NULL_REF, dtype=np.int64)

    for col in table.attribute_columns:
        raw = [cells[col.name][i] for i in order]
        if col.kind == "numerical":
            values = np.zeros(n, dtype=np.float64)
            missing = np.zeros(n, dtype=bool)
            for i, cell in enumerate(raw):
                if cell == "":
                    missing[i] = True
                    continue
                try:
                    values[i] = float(cell)
                except ValueError:
                    # Malformed numbers become explicit missing values, never zero.
                    missing[i] = True
            table.num_values[col.name] = values
            table.num_missing[col.name] = missing
        elif col.kind == "categorical":
            table.cat_values[col.name] = [c if c != "" else None for c in raw]
        else:
            table.text_values[col.name] = [c if c != "" else None for c in raw]
    return table


def resolve_foreign_keys(db: Database, strict: bool = True) -> None:
    """Map every foreign-key cell to the dense local id of its target row.

    Null cells become :data:`NULL_REF`. In strict mode a dangling reference
    raises :class:`IntegrityError` naming the offending row; otherwise it is
    stored as :data:`DANGLING_REF` for :func:`validate` to report.
    """
    for link in db.links:
        table = db.tables[link.fkey_table]
        target = db.tables[link.pkey_table]
        raw = table.fk_raw[link.fk_column]
        refs = table.fk_refs[link.fk_column]
        for i, cell in enumerate(raw):
            if cell is None:
                refs[i] = NULL_REF
                continue
            local = target.key_to_id.get(cell)
            if local is None:
                if strict:
                    raise IntegrityError(
                        f"table {link.fkey_table!r}, row with key {table.keys[i]!r}, "
                        f"column {link.fk_column!r}: reference {cell!r} not found "
                        f"in table {link.pkey_table!r}"
                    )
                refs[i] = DANGLING_REF
            else:
                refs[i] = local


def load_database(manifest_path, data_dir, check_integrity: bool = True, threads: int = 1) -> Database:
    """Load a database from a manifest plus one CSV per table.

    With ``check_integrity`` (the default), duplicate primary keys and
    dangling foreign keys raise :class:`IntegrityError`; without it they are
    recorded on the tables and surfaced by :func:`validate`. Table files may
    be read in parallel with up to ``threads`` workers.
    """
    entries = _parse_manifest(manifest_path)
    data_dir = Path(data_dir)

    names = [e.get("name") for e in entries]
    if len(set(names)) != len(names):
        raise ManifestError("duplicate table names in manifest")
    specs = {e["name"]: _column_specs(e) for e in entries}
    for tname, spec in specs.items():
        Table(tname, spec)  # surfaces per-table manifest violations before any file IO
        for col in spec:
            if col.kind == "foreign_key" and col.target not in specs:
                raise ManifestError(
                    f"table {tname!r}: foreign key {col.name!r} targets unknown table {col.target!r}"
                )

    def load_one(entry):
        tname = entry["name"]
        cells = _read_csv_columns(data_dir / entry["file"], tname, specs[tname])
        return tname, _build_table(tname, specs[tname], cells, strict=check_integrity)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            loaded = list(pool.map(load_one, entries))
    else:
        loaded = [load_one(e) for e in entries]
    tables = dict(loaded)

    links = []
    for entry in entries:
        for col in specs[entry["name"]]:
            if col.kind == "foreign_key":
                links.append(Link(entry["name"], col.name, col.target))
    db = Database(tables, links)
    resolve_foreign_keys(db, strict=check_integrity)
    return db


@dataclass
class Violation:
    kind: str  # dangling_fk | duplicate_pk | time_disorder
    table: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    null_rates: dict[tuple[str, str], float] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.violations)

    def summary(self) -> str:
        if not self.violations:
            return "ok: no violations"
        lines = [f"{len(self.violations)} violation(s):"]
        lines += [f"  [{v.kind}] {v.table}: {v.detail}" for v in self.violations]
        return "\n".join(lines)


def validate(db: Database) -> ValidationReport:
    """Diagnostics over a loaded database; empty report means valid."""
    report = ValidationReport()
    for name, table in db.tables.items():
        for key in table.duplicate_keys:
            report.violations.append(Violation("duplicate_pk", name, f"primary key {key!r} occurs more than once"))
        for col in table.fk_columns:
            refs = table.fk_refs[col.name]
            for i in np.flatnonzero(refs == DANGLING_REF):
                report.violations.append(
                    Violation(
                        "dangling_fk",
                        name,
                        f"row with key {table.keys[i]!r}, column {col.name!r}: "
                        f"reference {table.fk_raw[col.name][i]!r} not found in {col.target!r}",
                    )
                )
        if table.n_rows and np.any(np.diff(table.times) < 0):
            report.violations.append(Violation("time_disorder", name, "timestamps are not non-decreasing by local id"))

        n = max(table.n_rows, 1)
        for col in table.spec:
            if col.kind == "foreign_key":
                nulls = int(np.sum(table.fk_refs[col.name] == NULL_REF)) if table.n_rows else 0
            elif col.kind == "numerical":
                nulls = int(table.num_missing[col.name].sum())
            elif col.kind == "categorical":
                nulls = sum(v is None for v in table.cat_values[col.name])
            elif col.kind == "text":
                nulls = sum(v is None for v in table.text_values[col.name])
            else:
                nulls = 0  # primary keys and timestamps cannot load as null
            report.null_rates[(name, col.name)] = nulls / n
    return report


def row_count_summary(db: Database) -> dict[str, int]:
    """Exact row counts per table."""
    return {name: t.n_rows for name, t in db.tables.items()}


def _format_cell(table: Table, col: ColumnSpec, local_id: int) -> str:
    if col.kind == "primary_key":
        return table.keys[local_id]
    if col.kind == "timestamp":
        return format_time(int(table.times[local_id]))
    if col.kind == "foreign_key":
        return table.fk_raw[col.name][local_id] or ""
    if col.kind == "numerical":
        if table.num_missing[col.name][local_id]:
            return ""
        return repr(float(table.num_values[col.name][local_id]))
    value = (table.cat_values if col.kind == "categorical" else table.text_values)[col.name][local_id]
    return value if value is not None else ""


def save_database(db: Database, out_dir) -> Path:
    """Write manifest plus one CSV per table; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, table in db.tables.items():
        filename = f"{name}.csv"
        entries.append(
            {
                "name": name,
                "file": filename,
                "columns": [
                    {"name": c.name, "kind": c.kind, **({"target": c.target} if c.target else {})}
                    for c in table.spec
                ],
            }
        )
        with open(out_dir / filename, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([c.name for c in table.spec])
            for i in range(table.n_rows):
                writer.writerow([_format_cell(table, c, i) for c in table.spec])
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"tables": entries}, indent=2) + "\n", encoding="utf-8")
    return manifest
