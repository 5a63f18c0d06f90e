"""Typed storage and serialization of feature vectors and labeled feature sets.

Sets are stored on disk in the PDAF binary format:

    magic "PDAF" (4 bytes)
    format version          u16 LE (= 1)
    n (row count)           u64 LE
    d (feature dimension)   u32 LE
    label-table byte length u32 LE
    label table             UTF-8, entries separated by NUL
    per-row label indices   u16 LE x n (0xFFFF = set carries no labels)
    payload                 n * d float32 LE, row-major

The numeric payload is single precision; everything downstream computes in
float64. Sets are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

PDAF_MAGIC = b"PDAF"
PDAF_VERSION = 1
_UNLABELED_INDEX = 0xFFFF
_HEADER = struct.Struct("<4sHQII")

#: tags a set may carry per row; generator ids after "unknown_fake:" are open-ended
KNOWN_LABEL_PREFIXES = ("real", "known_fake", "unknown_fake:", "unlabeled")


class PdafError(ValueError):
    """Raised for malformed or unreadable PDAF/CSV feature files."""


def _is_known_label(label: str) -> bool:
    return label in ("real", "known_fake", "unlabeled") or (
        label.startswith("unknown_fake:") and len(label) > len("unknown_fake:")
    )


@dataclass(frozen=True)
class FeatureVector:
    """A single feature embedding: finite activations, fixed dimension."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 1:
            raise ValueError(f"feature vector must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            col = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise ValueError(f"non-finite value at (0,{col})")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)


class FeatureSet:
    """Immutable labeled collection of equal-dimension feature vectors.

    The payload is held as an (n, d) float32 matrix. Labels, when present,
    are one string per row. Construction validates every invariant and
    raises ValueError naming the first violation; use :func:`validate` to
    collect findings from raw material instead.
    """

    __slots__ = ("_matrix", "_labels", "source", "seed")

    def __init__(
        self,
        matrix: np.ndarray | Sequence[Sequence[float]],
        labels: Sequence[str] | None = None,
        source: str = "",
        seed: int | None = None,
        dim: int | None = None,
    ) -> None:
        arr = np.asarray(matrix, dtype=np.float32)
        if arr.size == 0:
            n = arr.shape[0] if arr.ndim >= 1 else 0
            if dim is None:
                dim = arr.shape[1] if arr.ndim == 2 else 0
            arr = np.zeros((n, dim), dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {arr.shape}")
        if dim is not None and arr.shape[1] != dim:
            raise ValueError(f"declared dim {dim} != matrix width {arr.shape[1]}")
        bad = ~np.isfinite(arr)
        if bad.any():
            row, col = (int(x) for x in np.argwhere(bad)[0])
            raise ValueError(f"non-finite value at ({row},{col})")
        if labels is not None:
            if len(labels) != arr.shape[0]:
                raise ValueError(
                    f"label count mismatch: {len(labels)} labels for {arr.shape[0]} vectors"
                )
            labels = tuple(str(x) for x in labels)
        arr = arr.copy()
        arr.flags.writeable = False
        self._matrix = arr
        self._labels = labels
        self.source = source
        self.seed = seed

    @property
    def matrix(self) -> np.ndarray:
        """(n, d) float32 payload, read-only."""
        return self._matrix

    @property
    def labels(self) -> tuple[str, ...] | None:
        return self._labels

    @property
    def dim(self) -> int:
        return int(self._matrix.shape[1])

    def __len__(self) -> int:
        return int(self._matrix.shape[0])

    def row(self, i: int) -> FeatureVector:
        return FeatureVector(self._matrix[i])

    def __iter__(self) -> Iterator[FeatureVector]:
        for i in range(len(self)):
            yield self.row(i)

    def as_float64(self) -> np.ndarray:
        """Payload widened to float64 for computation."""
        return self._matrix.astype(np.float64)

    def replace(
        self,
        matrix: np.ndarray | None = None,
        labels: Sequence[str] | None | str = "keep",
        source: str | None = None,
    ) -> "FeatureSet":
        """Copy with selected fields swapped; used by pipeline stages."""
        new_labels = self._labels if labels == "keep" else labels
        return FeatureSet(
            matrix=self._matrix if matrix is None else matrix,
            labels=new_labels,
            source=self.source if source is None else source,
            seed=self.seed,
            dim=self.dim if matrix is None else None,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self._matrix.shape == other._matrix.shape
            and np.array_equal(self._matrix, other._matrix)
            and self._labels == other._labels
            and self.source == other.source
            and self.seed == other.seed
        )


@dataclass(frozen=True)
class PairedSet:
    """Index-aligned raw/regenerated feature pairs."""

    raw: FeatureSet
    regenerated: FeatureSet

    def __post_init__(self) -> None:
        if len(self.raw) != len(self.regenerated):
            raise ValueError(
                f"paired sets differ in count: {len(self.raw)} vs {len(self.regenerated)}"
            )
        if self.raw.dim != self.regenerated.dim:
            raise ValueError(
                f"paired sets differ in dim: {self.raw.dim} vs {self.regenerated.dim}"
            )

    def __len__(self) -> int:
        return len(self.raw)


@dataclass
class ValidationReport:
    """Findings from checking a feature set's invariants; empty means valid."""

    findings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def add(self, message: str) -> None:
        self.findings.append(message)

    def __str__(self) -> str:
        return "valid" if self.ok else "; ".join(self.findings)


def validate(
    rows: FeatureSet | Sequence[Sequence[float]],
    labels: Sequence[str] | None = None,
    declared_dim: int | None = None,
) -> ValidationReport:
    """Report every violated invariant with its location.

    Accepts either a constructed :class:`FeatureSet` (which is valid by
    construction except for label vocabulary) or raw row material, which may
    be ragged or non-finite.
    """
    report = ValidationReport()
    if isinstance(rows, FeatureSet):
        label_list = rows.labels
        row_list: list[np.ndarray] = [np.asarray(r, dtype=np.float64) for r in rows.matrix]
        expected_dim = rows.dim
    else:
        label_list = tuple(labels) if labels is not None else None
        row_list = []
        for r in rows:
            try:
                row_list.append(np.asarray(r, dtype=np.float64))
            except (TypeError, ValueError):
                row_list.append(np.array([np.nan]))
        expected_dim = declared_dim

    if expected_dim is None and row_list:
        expected_dim = int(row_list[0].shape[0]) if row_list[0].ndim == 1 else None

    for i, r in enumerate(row_list):
        if r.ndim != 1:
            report.add(f"row {i} is not a flat vector")
            continue
        if expected_dim is not None and r.shape[0] != expected_dim:
            report.add(f"dim mismatch at row {i}: got {r.shape[0]}, expected {expected_dim}")
        bad = np.flatnonzero(~np.isfinite(r))
        for col in bad:
            report.add(f"non-finite value at ({i},{int(col)})")

    if label_list is not None:
        if len(label_list) != len(row_list):
            report.add(
                f"label count mismatch: {len(label_list)} labels for {len(row_list)} vectors"
            )
        for i, lab in enumerate(label_list):
            if not lab:
                report.add(f"empty label at row {i}")
            elif not _is_known_label(lab):
                report.add(f"unrecognized label {lab!r} at row {i}")
    return report


def save_feature_file(fset: FeatureSet, path: str | Path) -> None:
    """Write a PDAF v1 file; reload yields a bitwise-identical payload."""
    report = validate(fset)
    if not report.ok:
        raise ValueError(f"refusing to write invalid set: {report}")
    labels = fset.labels
    if labels is None:
        table = b""
        indices = np.full(len(fset), _UNLABELED_INDEX, dtype="<u2")
    else:
        order: dict[str, int] = {}
        for lab in labels:
            if lab not in order:
                order[lab] = len(order)
        if len(order) >= _UNLABELED_INDEX:
            raise ValueError(f"label table overflow: {len(order)} distinct labels")
        table = b"\x00".join(lab.encode("utf-8") for lab in order)
        indices = np.array([order[lab] for lab in labels], dtype="<u2")

    payload = np.ascontiguousarray(fset.matrix, dtype="<f4")
    header = _HEADER.pack(PDAF_MAGIC, PDAF_VERSION, len(fset), fset.dim, len(table))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(table)
        fh.write(indices.tobytes())
        fh.write(payload.tobytes())


def load_feature_file(path: str | Path) -> FeatureSet:
    """Read a PDAF v1 file back into a validated FeatureSet."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise PdafError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, n, d, table_len = _HEADER.unpack_from(raw)
    if magic != PDAF_MAGIC:
        raise PdafError(f"{path}: unrecognized magic {magic!r}")
    if version != PDAF_VERSION:
        raise PdafError(f"{path}: unsupported format version {version}")

    offset = _HEADER.size
    if len(raw) < offset + table_len:
        raise PdafError(f"{path}: truncated label table")
    table = raw[offset : offset + table_len]
    offset += table_len
    entries = table.split(b"\x00") if table else []

    index_bytes = 2 * n
    if len(raw) < offset + index_bytes:
        raise PdafError(f"{path}: truncated label indices")
    indices = np.frombuffer(raw, dtype="<u2", count=n, offset=offset)
    offset += index_bytes

    need = 4 * n * d
    have = len(raw) - offset
    if have < need:
        raise PdafError(
            f"{path}: truncated payload: {n}x{d} float32 needs {need} bytes, found {have}"
        )
    matrix = (
        np.frombuffer(raw, dtype="<f4", count=n * d, offset=offset).reshape(n, d).copy()
    )
    if not np.all(np.isfinite(matrix)):
        row, col = (int(x) for x in np.argwhere(~np.isfinite(matrix))[0])
        raise PdafError(f"{path}: non-finite value at ({row},{col})")

    if not entries:
        if n and not np.all(indices == _UNLABELED_INDEX):
            raise PdafError(f"{path}: label index without a label table")
        labels = None
    else:
        decoded = [e.decode("utf-8") for e in entries]
        if np.any(indices >= len(decoded)):
            bad = int(np.flatnonzero(indices >= len(decoded))[0])
            raise PdafError(f"{path}: label index out of range at row {bad}")
        labels = [decoded[int(i)] for i in indices]

    return FeatureSet(matrix, labels=labels, source=str(path), dim=d)


def load_feature_csv(path: str | Path) -> FeatureSet:
    """Read a headerless comma-separated file, one vector per line.

    A non-numeric trailing field is treated as the row's label; the choice
    must be consistent across lines. CSV is lossy (decimal text) and exists
    only for interoperability.
    """
    path = Path(path)
    rows: list[list[float]] = []
    labels: list[str] = []
    labeled: bool | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(",")]
            try:
                float(fields[-1])
                has_label = False
            except ValueError:
                has_label = True
            if labeled is None:
                labeled = has_label
            elif labeled != has_label:
                raise PdafError(f"{path}:{lineno}: inconsistent trailing label column")
            if has_label:
                labels.append(fields[-1])
                fields = fields[:-1]
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise PdafError(f"{path}:{lineno}: {exc}") from exc
    return FeatureSet(
        np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, 0)),
        labels=labels if labeled else None,
        source=str(path),
    )
