"""Versioned binary container for snapshots and checkpoints.

Layout: 8-byte magic, uint16 format version, uint32 header length, a UTF-8
JSON header, then the raw array payloads back to back. The header records
the container kind, free-form metadata, and for each array its name, dtype
and shape. All payloads are little-endian; int64/float64 throughout.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"RELGRAPH"
VERSION = 1


class SnapshotError(Exception):
    """Raised when a binary snapshot is malformed or of the wrong kind."""


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    specs = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        specs.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)})
        blobs.append(le.tobytes(order="C"))
    header = json.dumps({"kind": kind, "meta": meta, "arrays": specs}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(2, "little"))
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def read_container(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, arrays)``; checks magic, version and optionally kind."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise SnapshotError(f"{path}: not a relgraph container")
    version = int.from_bytes(data[8:10], "little")
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported container version {version}")
    hlen = int.from_bytes(data[10:14], "little")
    header = json.loads(data[14 : 14 + hlen].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise SnapshotError(f"{path}: expected kind {kind!r}, found {header['kind']!r}")
    arrays = {}
    offset = 14 + hlen
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        shape = tuple(spec["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        raw = data[offset : offset + nbytes]
        if len(raw) != nbytes:
            raise SnapshotError(f"{path}: truncated payload for array {spec['name']!r}")
        offset += nbytes
        arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
        arrays[spec["name"]] = arr.astype(np.dtype(spec["dtype"]), copy=True)
    return header["meta"], arrays
