"""PDAM binary container for fitted models, references, and thresholds.

Layout: magic "PDAM" | version u16 LE (= 1) | section count u32 LE, then per
section a 4-byte ASCII tag ("tsne", "pca ", "ref ", "tau ", "pipe"), a u64
LE payload length, and the payload. All floats inside payloads are f64 LE
(models are small); feature payloads of fitted inputs round-trip through
f64 losslessly since the store is f32.

A pipeline bundle is a PDAM file holding a model section, a "ref" section,
a "pipe" section (prune + k), and a "tau" section; `load_pipeline` turns it
back into a detector Pipeline, which re-checks threshold provenance.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .calibration import Threshold
from .detector import Pipeline
from .featstore import FeatureSet
from .knnindex import KnnConfig, ReferenceSet
from .pruning import PruneConfig
from .reduction import EmbeddingModel

PDAM_MAGIC = b"PDAM"
PDAM_VERSION = 1
_HEADER = struct.Struct("<4sHI")
_SECTION = struct.Struct("<4sQ")


class PdamError(ValueError):
    """Raised for malformed PDAM containers."""


class _Writer:
    def __init__(self) -> None:
        self.buf = bytearray()

    def u8(self, v: int) -> None:
        self.buf += struct.pack("<B", v)

    def u32(self, v: int) -> None:
        self.buf += struct.pack("<I", v)

    def u64(self, v: int) -> None:
        self.buf += struct.pack("<Q", v)

    def f64(self, v: float) -> None:
        self.buf += struct.pack("<d", v)

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.buf += raw

    def array(self, arr: np.ndarray) -> None:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        self.u64(arr.size)
        self.buf += arr.tobytes()


class _Reader:
    def __init__(self, buf: bytes, context: str) -> None:
        self.buf = buf
        self.pos = 0
        self.context = context

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise PdamError(f"{self.context}: truncated section payload")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        n = self.u32()
        return self._take(n).decode("utf-8")

    def array(self, shape=None) -> np.ndarray:
        n = self.u64()
        arr = np.frombuffer(self._take(8 * n), dtype="<f8").astype(np.float64)
        return arr.reshape(shape) if shape is not None else arr


def _encode_model(model: EmbeddingModel) -> tuple[bytes, bytes]:
    w = _Writer()
    w.u8(1 if model.standardize else 0)
    w.u32(model.dim)
    w.u64(model.n)
    w.array(model.feat_mean)
    w.array(model.feat_scale)
    w.array(model.fitted_inputs.as_float64())
    w.text(model.fitted_inputs.source)
    w.array(model.fitted_points)
    if model.mode == "tsne":
        w.f64(model.learning_rate)
        w.array(model.bandwidths)
        w.array(model.kl_trace if model.kl_trace is not None else np.empty(0))
        w.u64(len(model.infeasible_rows))
        for i in model.infeasible_rows:
            w.u64(i)
        return b"tsne", bytes(w.buf)
    w.u8(1 if model.rank_deficient else 0)
    w.array(model.center)
    w.array(model.basis)
    w.array(model.eigenvalues)
    w.f64(model.total_variance)
    return b"pca ", bytes(w.buf)


def _decode_model(tag: bytes, payload: bytes, context: str) -> EmbeddingModel:
    r = _Reader(payload, context)
    standardize = bool(r.u8())
    d = r.u32()
    n = r.u64()
    mean = r.array((d,))
    scale = r.array((d,))
    inputs = FeatureSet(r.array((n, d)).astype(np.float32), source=r.text(), dim=d)
    points = r.array((n, 2))
    if tag == b"tsne":
        lr = r.f64()
        bandwidths = r.array((n,))
        kl_trace = r.array()
        n_infeasible = r.u64()
        infeasible = tuple(r.u64() for _ in range(n_infeasible))
        return EmbeddingModel(
            mode="tsne",
            fitted_inputs=inputs,
            fitted_points=points,
            standardize=standardize,
            feat_mean=mean,
            feat_scale=scale,
            bandwidths=bandwidths,
            kl_trace=kl_trace if kl_trace.size else None,
            learning_rate=lr,
            infeasible_rows=infeasible,
        )
    rank_deficient = bool(r.u8())
    center = r.array((d,))
    basis = r.array((2, d))
    eigenvalues = r.array((2,))
    total_variance = r.f64()
    return EmbeddingModel(
        mode="pca",
        fitted_inputs=inputs,
        fitted_points=points,
        standardize=standardize,
        feat_mean=mean,
        feat_scale=scale,
        basis=basis,
        center=center,
        eigenvalues=eigenvalues,
        total_variance=total_variance,
        rank_deficient=rank_deficient,
    )


def _encode_ref(ref: ReferenceSet) -> bytes:
    w = _Writer()
    w.u64(ref.n)
    w.array(ref.points)
    w.text(ref.origin)
    return bytes(w.buf)


def _decode_ref(payload: bytes, context: str) -> ReferenceSet:
    r = _Reader(payload, context)
    n = r.u64()
    points = r.array((n, 2))
    return ReferenceSet(points, origin=r.text())


def _encode_tau(threshold: Threshold) -> bytes:
    w = _Writer()
    w.f64(threshold.tau)
    w.f64(threshold.q)
    w.u64(threshold.m)
    w.u32(threshold.k.k)
    w.text(threshold.provenance)
    w.array(threshold.distances)
    return bytes(w.buf)


def _decode_tau(payload: bytes, context: str) -> Threshold:
    r = _Reader(payload, context)
    tau = r.f64()
    q = r.f64()
    m = r.u64()
    k = r.u32()
    provenance = r.text()
    distances = r.array((m,))
    return Threshold(tau=tau, q=q, m=m, distances=distances, k=KnnConfig(k),
                     provenance=provenance)


def _encode_pipe(prune: PruneConfig | None, knn: KnnConfig) -> bytes:
    w = _Writer()
    w.u8(0 if prune is None else 1)
    w.f64(prune.p if prune is not None else 0.0)
    w.u32(knn.k)
    return bytes(w.buf)


def _decode_pipe(payload: bytes, context: str) -> tuple[PruneConfig | None, KnnConfig]:
    r = _Reader(payload, context)
    enabled = bool(r.u8())
    p = r.f64()
    k = r.u32()
    return (PruneConfig(p) if enabled else None), KnnConfig(k)


def write_sections(path: str | Path, sections: list[tuple[bytes, bytes]]) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(PDAM_MAGIC, PDAM_VERSION, len(sections)))
        for tag, payload in sections:
            if len(tag) != 4:
                raise ValueError(f"section tag must be 4 bytes, got {tag!r}")
            fh.write(_SECTION.pack(tag, len(payload)))
            fh.write(payload)


def read_sections(path: str | Path) -> list[tuple[bytes, bytes]]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise PdamError(f"{path}: truncated header")
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != PDAM_MAGIC:
        raise PdamError(f"{path}: unrecognized magic {magic!r}")
    if version != PDAM_VERSION:
        raise PdamError(f"{path}: unsupported version {version}")
    sections = []
    pos = _HEADER.size
    for _ in range(count):
        if pos + _SECTION.size > len(raw):
            raise PdamError(f"{path}: truncated section header")
        tag, length = _SECTION.unpack_from(raw, pos)
        pos += _SECTION.size
        if pos + length > len(raw):
            raise PdamError(f"{path}: truncated section {tag!r}")
        sections.append((tag, raw[pos : pos + length]))
        pos += length
    return sections


def _find(sections: list[tuple[bytes, bytes]], tags: tuple[bytes, ...], path) -> tuple[bytes, bytes]:
    for tag, payload in sections:
        if tag in tags:
            return tag, payload
    raise PdamError(f"{path}: no section with tag in {tags}")


def save_model(path: str | Path, model: EmbeddingModel,
               ref: ReferenceSet | None = None) -> None:
    """Write a model (optionally with its reference section) to a PDAM file."""
    sections = [_encode_model(model)]
    if ref is not None:
        sections.append((b"ref ", _encode_ref(ref)))
    write_sections(path, sections)


def save_fit_bundle(path: str | Path, model: EmbeddingModel, ref: ReferenceSet,
                    prune: PruneConfig | None, knn: KnnConfig = KnnConfig()) -> None:
    """Model + reference + pipe settings, as written by `pda fit`.

    The prune configuration is recorded here so calibration and detection
    reuse exactly the preprocessing the model was fitted with.
    """
    sections = [
        _encode_model(model),
        (b"ref ", _encode_ref(ref)),
        (b"pipe", _encode_pipe(prune, knn)),
    ]
    write_sections(path, sections)


def load_pipe_settings(path: str | Path) -> tuple[PruneConfig | None, KnnConfig]:
    sections = read_sections(path)
    _, payload = _find(sections, (b"pipe",), path)
    return _decode_pipe(payload, str(path))


def load_model(path: str | Path) -> EmbeddingModel:
    sections = read_sections(path)
    tag, payload = _find(sections, (b"tsne", b"pca "), path)
    return _decode_model(tag, payload, str(path))


def load_reference(path: str | Path) -> ReferenceSet:
    sections = read_sections(path)
    _, payload = _find(sections, (b"ref ",), path)
    return _decode_ref(payload, str(path))


def save_threshold(path: str | Path, threshold: Threshold) -> None:
    write_sections(path, [(b"tau ", _encode_tau(threshold))])


def load_threshold(path: str | Path) -> Threshold:
    sections = read_sections(path)
    _, payload = _find(sections, (b"tau ",), path)
    return _decode_tau(payload, str(path))


def save_pipeline(path: str | Path, pipeline: Pipeline) -> None:
    """Write a full inference bundle: model + ref + pipe + tau sections."""
    sections = [
        _encode_model(pipeline.model),
        (b"ref ", _encode_ref(pipeline.ref)),
        (b"pipe", _encode_pipe(pipeline.prune, pipeline.knn)),
        (b"tau ", _encode_tau(pipeline.threshold)),
    ]
    write_sections(path, sections)


def load_pipeline(path: str | Path) -> Pipeline:
    sections = read_sections(path)
    tag, payload = _find(sections, (b"tsne", b"pca "), path)
    model = _decode_model(tag, payload, str(path))
    _, ref_payload = _find(sections, (b"ref ",), path)
    ref = _decode_ref(ref_payload, str(path))
    _, pipe_payload = _find(sections, (b"pipe",), path)
    prune, knn = _decode_pipe(pipe_payload, str(path))
    _, tau_payload = _find(sections, (b"tau ",), path)
    threshold = _decode_tau(tau_payload, str(path))
    return Pipeline(prune=prune, model=model, ref=ref, knn=knn, threshold=threshold)
