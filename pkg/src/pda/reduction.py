"""Dimensionality reduction of pruned features to 2-D.

Two reducers share one model type:

* a from-scratch exact t-SNE: per-row bandwidths from a binary search on the
  conditional entropy, symmetrized affinities, and momentum gradient descent
  on KL(P || Q) with the Student-t low-dimensional kernel;
* a PCA alternative via eigendecomposition of the feature covariance.

Both standardize features (per-dimension zero mean / unit variance, with
statistics taken from the fit set) before reducing; the statistics live in
the model and apply to every later point. New points enter a fitted t-SNE
embedding out-of-sample: the reference embedding stays fixed and only the
new point descends, which keeps the reference set and the calibrated
threshold stable across inference calls.

Gradients are exact O(n^2); no tree approximation. The hot loops are
compiled with numba in strict IEEE mode, so results are bitwise reproducible
and the analytic gradient can be checked against finite differences.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .featstore import FeatureSet, FeatureVector

_LN2 = math.log(2.0)
_ENTROPY_TOL = 1e-5
_MAX_SEARCH_STEPS = 50

#: out-of-sample embedding: fixed step count, plain gradient descent
OOS_STEPS = 250
#: step size for the single-point descent; the affinity-weighted mean init
#: starts near the optimum and the local curvature is O(1), so a small
#: constant converges where larger steps oscillate
OOS_LEARNING_RATE = 2.0

#: per-coordinate step magnitude is capped at this multiple of the learning
#: rate purely as an overflow guard
_STEP_CLIP_FACTOR = 5.0


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    exaggeration_factor: float = 12.0
    exaggeration_iters: int = 250
    learning_rate: float = 200.0
    momentum_initial: float = 0.5
    momentum_final: float = 0.8
    seed: int = 0
    standardize: bool = True

    def __post_init__(self) -> None:
        if self.perplexity <= 0:
            raise ValueError(f"perplexity must be positive, got {self.perplexity}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.exaggeration_factor < 1:
            raise ValueError(
                f"exaggeration factor must be >= 1, got {self.exaggeration_factor}"
            )
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")


@dataclass(frozen=True)
class EmbeddingModel:
    """A fitted 2-D reduction, shareable and immutable.

    ``mode`` selects the reducer. t-SNE models carry the per-point affinity
    bandwidths and the KL optimization trace; PCA models carry the centered
    orthonormal basis. Both carry the standardization statistics of the fit
    set.
    """

    mode: str
    fitted_inputs: FeatureSet
    fitted_points: np.ndarray
    standardize: bool
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    # tsne
    bandwidths: np.ndarray | None = None
    kl_trace: np.ndarray | None = None
    learning_rate: float = 200.0
    infeasible_rows: tuple[int, ...] = ()
    # pca
    basis: np.ndarray | None = None
    center: np.ndarray | None = None
    eigenvalues: np.ndarray | None = None
    total_variance: float = 0.0
    rank_deficient: bool = False
    _std_inputs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.mode not in ("tsne", "pca"):
            raise ValueError(f"unknown embedding mode {self.mode!r}")
        pts = np.asarray(self.fitted_points, dtype=np.float64)
        if pts.shape != (len(self.fitted_inputs), 2):
            raise ValueError(
                f"fitted_points shape {pts.shape} does not match "
                f"{len(self.fitted_inputs)} fitted inputs"
            )
        for name in ("fitted_points", "feat_mean", "feat_scale"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.mode == "tsne":
            if self.bandwidths is None or len(self.bandwidths) != len(self.fitted_inputs):
                raise ValueError("tsne model requires one bandwidth per fitted point")
        if self.mode == "pca":
            if self.basis is None or self.basis.shape != (2, self.dim):
                raise ValueError("pca model requires a (2, d) basis")
            gram = self.basis @ self.basis.T
            if abs(gram[0, 0] - 1) > 1e-10 or abs(gram[1, 1] - 1) > 1e-10:
                raise ValueError("pca basis vectors must be unit norm")
            if abs(gram[0, 1]) > 1e-10:
                raise ValueError("pca basis vectors must be orthogonal")
        std = self.fitted_inputs.as_float64()
        if self.standardize:
            std = (std - self.feat_mean) / self.feat_scale
        object.__setattr__(self, "_std_inputs", std)

    @property
    def dim(self) -> int:
        return self.fitted_inputs.dim

    @property
    def n(self) -> int:
        return len(self.fitted_inputs)

    def preprocess(self, x: np.ndarray) -> np.ndarray:
        """Apply the fit set's standardization to a raw (d,) vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"dim mismatch: got {x.shape}, model expects ({self.dim},)")
        if self.standardize:
            return (x - self.feat_mean) / self.feat_scale
        return x


def model_id(model: EmbeddingModel) -> str:
    """Stable content hash of a fitted model, used for threshold provenance."""
    h = hashlib.sha256()
    h.update(model.mode.encode())
    h.update(b"\x01" if model.standardize else b"\x00")
    h.update(model.feat_mean.tobytes())
    h.update(model.feat_scale.tobytes())
    h.update(np.ascontiguousarray(model.fitted_inputs.matrix, dtype="<f4").tobytes())
    h.update(np.ascontiguousarray(model.fitted_points).tobytes())
    if model.mode == "tsne":
        h.update(np.ascontiguousarray(model.bandwidths).tobytes())
        h.update(np.float64(model.learning_rate).tobytes())
    else:
        h.update(np.ascontiguousarray(model.basis).tobytes())
        h.update(np.ascontiguousarray(model.center).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# affinities


def _standardization(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    scale = np.where(std == 0.0, 1.0, std)
    return mean, scale


def _squared_distance_matrix(X: np.ndarray) -> np.ndarray:
    sq = (X * X).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _row_entropy_bits(d2_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    """Shannon entropy (bits) and normalized affinities for one row."""
    shifted = d2_row - d2_row.min()
    p = np.exp(-beta * shifted)
    s = p.sum()
    h_nats = math.log(s) + beta * float((shifted * p).sum()) / s
    return h_nats / _LN2, p / s


def affinity_bandwidths(
    matrix: np.ndarray, perplexity: float
) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    """Per-row conditional affinities with entropy-matched bandwidths.

    Returns the row-normalized conditional matrix (zero diagonal), the
    bandwidths sigma_i, and the indices of rows where the entropy target
    log2(perplexity) was unreachable within the search budget. Those rows
    fall back to the median pairwise distance as bandwidth.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    if not perplexity < n:
        raise ValueError(f"perplexity {perplexity} must be < n = {n}")
    d2 = _squared_distance_matrix(matrix)
    target = math.log2(perplexity)

    p_cond = np.zeros((n, n))
    betas = np.empty(n)
    infeasible: list[int] = []
    median_beta: float | None = None
    mask = ~np.eye(n, dtype=bool)

    for i in range(n):
        row = d2[i][mask[i]]
        beta, beta_lo, beta_hi = 1.0, 0.0, math.inf
        h, p = _row_entropy_bits(row, beta)
        steps = 0
        while abs(h - target) > _ENTROPY_TOL and steps < _MAX_SEARCH_STEPS:
            if h > target:
                beta_lo = beta
                beta = beta * 2.0 if math.isinf(beta_hi) else (beta + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = beta / 2.0 if beta_lo == 0.0 else (beta + beta_lo) / 2.0
            h, p = _row_entropy_bits(row, beta)
            steps += 1
        if abs(h - target) > _ENTROPY_TOL:
            infeasible.append(i)
            if median_beta is None:
                med = float(np.median(np.sqrt(d2[mask])))
                median_beta = 1.0 / (2.0 * med * med) if med > 0 else 1.0
            beta = median_beta
            _, p = _row_entropy_bits(row, beta)
        betas[i] = beta
        p_cond[i][mask[i]] = p

    sigmas = np.sqrt(1.0 / (2.0 * betas))
    return p_cond, sigmas, tuple(infeasible)


def pairwise_affinities(X: FeatureSet | np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrized t-SNE affinity matrix P = (P_cond + P_cond^T) / 2n.

    Non-negative, symmetric, sums to 1. Operates on the features as given;
    fit_tsne standardizes before calling this construction.
    """
    matrix = X.as_float64() if isinstance(X, FeatureSet) else np.asarray(X, np.float64)
    p_cond, _, _ = affinity_bandwidths(matrix, perplexity)
    return (p_cond + p_cond.T) / (2.0 * matrix.shape[0])


# ---------------------------------------------------------------------------
# t-SNE optimization


@njit(parallel=True, fastmath=False, cache=True)
def _tsne_step(Y, P_eff, P_true, sum_plogp):  # pragma: no cover - compiled
    """Fused KL gradient (against P_eff) and KL value (against P_true).

    Row accumulations are sequential per row, so results do not depend on
    the thread count.
    """
    n = Y.shape[0]
    row_w = np.zeros(n)
    for i in prange(n):
        yi0 = Y[i, 0]
        yi1 = Y[i, 1]
        s = 0.0
        for j in range(n):
            if j != i:
                d0 = yi0 - Y[j, 0]
                d1 = yi1 - Y[j, 1]
                s += 1.0 / (1.0 + d0 * d0 + d1 * d1)
        row_w[i] = s
    total_w = 0.0
    for i in range(n):
        total_w += row_w[i]

    grad = np.zeros((n, 2))
    row_kl = np.zeros(n)
    for i in prange(n):
        yi0 = Y[i, 0]
        yi1 = Y[i, 1]
        g0 = 0.0
        g1 = 0.0
        kl = 0.0
        for j in range(n):
            if j != i:
                d0 = yi0 - Y[j, 0]
                d1 = yi1 - Y[j, 1]
                d2 = d0 * d0 + d1 * d1
                w = 1.0 / (1.0 + d2)
                coef = (P_eff[i, j] - w / total_w) * w
                g0 += coef * d0
                g1 += coef * d1
                if P_true[i, j] > 0.0:
                    kl += P_true[i, j] * np.log1p(d2)
        grad[i, 0] = 4.0 * g0
        grad[i, 1] = 4.0 * g1
        row_kl[i] = kl
    kl_total = 0.0
    for i in range(n):
        kl_total += row_kl[i]
    return grad, sum_plogp + kl_total + np.log(total_w)


def kl_divergence_and_gradient(P: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q) under the Student-t kernel and its gradient wrt Y.

    This is the exact production step used by fit_tsne, exposed so the
    analytic gradient can be verified against finite differences.
    """
    P = np.ascontiguousarray(P, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    pos = P > 0
    sum_plogp = float((P[pos] * np.log(P[pos])).sum())
    grad, kl = _tsne_step(Y, P, P, sum_plogp)
    return float(kl), grad


def fit_tsne(X: FeatureSet, cfg: TsneConfig) -> EmbeddingModel:
    """Fit the 2-D t-SNE embedding of a feature set.

    Deterministic given cfg.seed: the initial coordinates are drawn
    Gaussian(0, 1e-4) from the seeded generator. The per-iteration KL values
    (computed against the unexaggerated affinities) are recorded in the
    model's kl_trace; entry 0 is the initial configuration, the last entry
    the final one.
    """
    n = len(X)
    if n < 3:
        raise ValueError(f"t-SNE needs at least 3 points, got {n}")
    if not cfg.perplexity < n:
        raise ValueError(f"perplexity {cfg.perplexity} must be < n = {n}")

    raw = X.as_float64()
    mean, scale = _standardization(raw)
    work = (raw - mean) / scale if cfg.standardize else raw

    p_cond, sigmas, infeasible = affinity_bandwidths(work, cfg.perplexity)
    P = np.ascontiguousarray((p_cond + p_cond.T) / (2.0 * n))
    pos = P > 0
    sum_plogp = float((P[pos] * np.log(P[pos])).sum())
    P_ex = np.ascontiguousarray(P * cfg.exaggeration_factor)

    rng = np.random.default_rng(cfg.seed)
    Y = np.ascontiguousarray(rng.normal(0.0, 1e-2, size=(n, 2)))
    velocity = np.zeros((n, 2))
    clip = _STEP_CLIP_FACTOR * cfg.learning_rate
    trace = np.empty(cfg.iterations + 1)

    for it in range(cfg.iterations):
        exaggerating = it < cfg.exaggeration_iters
        grad, kl = _tsne_step(Y, P_ex if exaggerating else P, P, sum_plogp)
        trace[it] = kl
        step = np.clip(-cfg.learning_rate * grad, -clip, clip)
        momentum = cfg.momentum_initial if exaggerating else cfg.momentum_final
        velocity = momentum * velocity + step
        Y = Y + velocity
        Y -= Y.mean(axis=0)
    _, trace[cfg.iterations] = _tsne_step(Y, P, P, sum_plogp)

    return EmbeddingModel(
        mode="tsne",
        fitted_inputs=X,
        fitted_points=Y,
        standardize=cfg.standardize,
        feat_mean=mean,
        feat_scale=scale,
        bandwidths=sigmas,
        kl_trace=trace,
        learning_rate=cfg.learning_rate,
        infeasible_rows=infeasible,
    )


# ---------------------------------------------------------------------------
# out-of-sample embedding


@njit(fastmath=False, cache=True)
def _oos_descent(fitted, p, y0, steps, lr, clip):  # pragma: no cover - compiled
    n = fitted.shape[0]
    y0c = y0[0]
    y1c = y0[1]
    for _ in range(steps):
        s = 0.0
        for j in range(n):
            d0 = y0c - fitted[j, 0]
            d1 = y1c - fitted[j, 1]
            s += 1.0 / (1.0 + d0 * d0 + d1 * d1)
        g0 = 0.0
        g1 = 0.0
        for j in range(n):
            d0 = y0c - fitted[j, 0]
            d1 = y1c - fitted[j, 1]
            w = 1.0 / (1.0 + d0 * d0 + d1 * d1)
            coef = (p[j] - w / s) * w
            g0 += coef * d0
            g1 += coef * d1
        s0 = -lr * 2.0 * g0
        s1 = -lr * 2.0 * g1
        if s0 > clip:
            s0 = clip
        elif s0 < -clip:
            s0 = -clip
        if s1 > clip:
            s1 = clip
        elif s1 < -clip:
            s1 = -clip
        y0c += s0
        y1c += s1
    return y0c, y1c


def embed_out_of_sample(model: EmbeddingModel, x) -> np.ndarray:
    """Embed one new point into a fitted t-SNE model.

    Affinities to the fitted inputs use the median of the model's
    bandwidths; the point starts at the affinity-weighted mean of the fitted
    coordinates and descends the single-point KL for a fixed number of steps
    while the reference embedding stays frozen.
    """
    if model.mode != "tsne":
        raise ValueError(f"out-of-sample embedding requires a tsne model, got {model.mode}")
    vec = x.as_float64() if isinstance(x, FeatureVector) else np.asarray(x, np.float64)
    work = model.preprocess(vec)

    diff = model._std_inputs - work
    d2 = (diff * diff).sum(axis=1)
    med = float(np.median(model.bandwidths))
    beta = 1.0 / (2.0 * med * med) if med > 0 else 1.0
    e = -beta * d2
    e -= e.max()
    p = np.exp(e)
    p /= p.sum()

    y0 = p @ model.fitted_points
    clip = _STEP_CLIP_FACTOR * OOS_LEARNING_RATE
    ya, yb = _oos_descent(
        np.ascontiguousarray(model.fitted_points),
        np.ascontiguousarray(p),
        np.ascontiguousarray(y0),
        OOS_STEPS,
        OOS_LEARNING_RATE,
        clip,
    )
    return np.array([ya, yb])


# ---------------------------------------------------------------------------
# PCA


def _project_row(model: EmbeddingModel, x) -> np.ndarray:
    work = model.preprocess(
        x.as_float64() if isinstance(x, FeatureVector) else np.asarray(x, np.float64)
    )
    # same per-row expression fit_pca uses, so fitted inputs reproduce their
    # fitted_points rows exactly
    return model.basis @ (work - model.center)


def fit_pca(X: FeatureSet, dims: int = 2, standardize: bool = True) -> EmbeddingModel:
    """Top-2 principal directions via covariance eigendecomposition.

    Sign convention: the largest-magnitude component of each basis vector is
    positive. When the data has rank < 2 the second direction is an
    arbitrary (but deterministic) null-space vector and the model is flagged
    rank_deficient.
    """
    if dims != 2:
        raise ValueError("only 2-D reduction is supported")
    n = len(X)
    if n < 2:
        raise ValueError(f"PCA needs at least 2 points, got {n}")

    raw = X.as_float64()
    mean, scale = _standardization(raw)
    work = (raw - mean) / scale if standardize else raw
    center = work.mean(axis=0)
    centered = work - center
    cov = centered.T @ centered / (n - 1)

    eigvals, eigvecs = np.linalg.eigh(cov)
    basis = eigvecs[:, [-1, -2]].T.copy()
    for r in range(2):
        lead = int(np.argmax(np.abs(basis[r])))
        if basis[r, lead] < 0:
            basis[r] = -basis[r]
    top = np.array([eigvals[-1], eigvals[-2]])
    rank_deficient = bool(eigvals[-2] <= max(eigvals[-1], 1.0) * 1e-12)

    points = np.array([basis @ (w - center) for w in work])
    return EmbeddingModel(
        mode="pca",
        fitted_inputs=X,
        fitted_points=points,
        standardize=standardize,
        feat_mean=mean,
        feat_scale=scale,
        basis=basis,
        center=center,
        eigenvalues=top,
        total_variance=float(eigvals.sum()),
        rank_deficient=rank_deficient,
    )


def embed_point(model: EmbeddingModel, x) -> np.ndarray:
    """Embed a feature vector with a fitted model (dispatch on mode)."""
    if model.mode == "pca":
        return _project_row(model, x)
    return embed_out_of_sample(model, x)
