"""Minimal PDAF v1 codec.

The detection engine defines the format; the adapter implements it
independently so the two packages share only the byte contract:

    magic "PDAF" | version u16 LE (=1) | n u64 LE | d u32 LE
    | label-table length u32 LE | label table (UTF-8, NUL-separated)
    | per-row label indices u16 LE x n (0xFFFF = unlabeled)
    | payload n*d float32 LE row-major
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_MAGIC = b"PDAF"
_VERSION = 1
_UNLABELED = 0xFFFF
_HEADER = struct.Struct("<4sHQII")


def write_pdaf(path: str | Path, matrix: np.ndarray, labels: list[str] | None = None) -> None:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("feature matrix contains non-finite values")
    n, d = matrix.shape
    if labels is None:
        table = b""
        indices = np.full(n, _UNLABELED, dtype="<u2")
    else:
        if len(labels) != n:
            raise ValueError(f"{len(labels)} labels for {n} rows")
        order: dict[str, int] = {}
        for lab in labels:
            order.setdefault(lab, len(order))
        table = b"\x00".join(lab.encode("utf-8") for lab in order)
        indices = np.array([order[lab] for lab in labels], dtype="<u2")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, n, d, len(table)))
        fh.write(table)
        fh.write(indices.tobytes())
        fh.write(matrix.tobytes())


def read_pdaf(path: str | Path) -> tuple[np.ndarray, list[str] | None]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, d, table_len = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: unrecognized magic {magic!r}")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = _HEADER.size
    table = raw[pos : pos + table_len]
    pos += table_len
    indices = np.frombuffer(raw, dtype="<u2", count=n, offset=pos)
    pos += 2 * n
    need = 4 * n * d
    if len(raw) - pos < need:
        raise ValueError(f"{path}: truncated payload")
    matrix = np.frombuffer(raw, dtype="<f4", count=n * d, offset=pos).reshape(n, d).copy()
    if not table:
        return matrix, None
    entries = [e.decode("utf-8") for e in table.split(b"\x00")]
    return matrix, [entries[i] for i in indices]
