"""Spectral estimation of the truncated feature map from an observed graph."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from . import rng
from .errors import NumericalError, ValidationError
from .graphgen import DENSE_LIMIT, AdjacencyMatrix, BipartiteMatrix

SYMMETRY_TOL = 1e-10
# Multiplier on the gap threshold in calibrated mode; the theory value (10) exceeds
# the whole spectrum of A/rho at any feasible n.
CALIBRATED_CONSTANT = 0.03


class SpectralWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EigenDecomposition:
    values: np.ndarray
    vectors: np.ndarray

    def __len__(self):
        return len(self.values)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _select(values, vectors, k, order):
    if order == "magnitude":
        # larger |lambda| first; positive wins ties
        perm = np.lexsort((-values, -np.abs(values)))
    else:
        perm = np.argsort(-values, kind="stable")
    perm = perm[:k]
    return values[perm], vectors[:, perm]


def symmetric_eigendecomposition(matrix, k: int, order: str = "auto") -> EigenDecomposition:
    """Top-``k`` eigenpairs of a symmetric matrix.

    ``order='algebraic'`` ranks by value, ``'magnitude'`` by absolute value;
    ``'auto'`` uses algebraic order for PSD inputs and magnitude otherwise.
    Returned pairs are sorted by value, descending, with a deterministic sign
    convention (largest-magnitude entry of each vector positive).
    """
    if order not in ("auto", "algebraic", "magnitude"):
        raise ValidationError(f"unknown eigenvalue order {order!r}")
    n = matrix.shape[0]
    if matrix.shape != (n, n):
        raise ValidationError(f"matrix must be square, got {matrix.shape}")
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} must lie in [1, {n}]")
    sparse = sp.issparse(matrix)
    asym = abs(matrix - matrix.T).max() if sparse else np.max(np.abs(matrix - matrix.T), initial=0.0)
    if asym > SYMMETRY_TOL:
        raise ValidationError(f"matrix is not symmetric (max asymmetry {asym:.3g})")

    if n <= DENSE_LIMIT or k >= n - 1:
        dense = matrix.toarray() if sparse else np.asarray(matrix, dtype=float)
        try:
            values, vectors = np.linalg.eigh(dense.astype(float))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigendecomposition failed: {exc}") from exc
        if order == "auto":
            order = "algebraic" if values[0] >= -1e-10 * max(1.0, abs(values[-1])) else "magnitude"
        values, vectors = _select(values, vectors, k, order)
    else:
        which = "LA" if order == "algebraic" else "LM"
        v0 = rng.uniform_stream(0, rng.EIGEN_START, 0, n) - 0.5
        try:
            values, vectors = eigsh(matrix.astype(float), k=k, which=which, v0=v0, tol=1e-10, maxiter=20 * n)
        except ArpackNoConvergence as exc:
            raise NumericalError(f"iterative eigensolver did not converge: {exc}") from exc
        values, vectors = _select(values, vectors, k, "algebraic" if which == "LA" else "magnitude")
    perm = np.argsort(-values, kind="stable")
    return EigenDecomposition(values[perm].copy(), _fix_signs(vectors[:, perm]))


@dataclass(frozen=True)
class ThresholdParams:
    """Rank-selection parameters: gap threshold is ``constant * (t / rho) ** exponent``."""

    t: float | None = None
    constant: float = 10.0
    exponent: float = 2.0 / 29.0
    max_rank: int = 20

    def resolve_t(self, rho: float, n: int) -> float:
        t = rho ** (2.0 / 3.0) if self.t is None else float(self.t)
        if not t < rho:
            raise ValidationError(f"t={t} must be smaller than rho={rho}")
        if not t * t / rho > 1:
            raise ValidationError(f"t^2/rho = {t * t / rho:.4g} must exceed 1")
        if t * t / rho <= math.log(n):
            warnings.warn(f"t^2/rho = {t * t / rho:.3g} <= log n = {math.log(n):.3g}; "
                          "concentration bound not in force", SpectralWarning, stacklevel=3)
        return t

    def threshold(self, rho: float, n: int) -> float:
        return self.constant * (self.resolve_t(rho, n) / rho) ** self.exponent


def decide_threshold(values, threshold: float, max_rank: int | None = None) -> tuple[int, bool]:
    """Largest ``d`` with ``values[d-1] - values[d] >= threshold``.

    Returns ``(d, fallback)``; when no gap qualifies ``d = 1`` and a warning is issued.
    """
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        raise ValidationError("need at least two eigenvalues to compute a gap")
    gaps = values[:-1] - values[1:]
    if max_rank is not None:
        gaps = gaps[:max_rank]
    ok = np.nonzero(gaps >= threshold)[0]
    if len(ok) == 0:
        warnings.warn(f"no eigengap reaches {threshold:.4g}; falling back to d=1", SpectralWarning, stacklevel=2)
        return 1, True
    return int(ok[-1]) + 1, False


@dataclass
class FeatureEmbedding:
    rows: np.ndarray
    rank: int
    scale: float
    source: str
    meta: dict = field(default_factory=dict)
    index: np.ndarray | None = None  # original node ids of the rows; None means 0..n-1

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        self.index = (np.arange(len(self.rows)) if self.index is None
                      else np.asarray(self.index, dtype=np.int64))
        if self.rank < 1:
            raise ValidationError("rank must be at least 1")
        if not np.all(np.isfinite(self.rows)):
            raise NumericalError("embedding contains non-finite entries")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def write(self, path) -> None:
        """Write ``index,z1..zd`` CSV plus a JSON sidecar ``<path>.meta.json``."""
        path = Path(path)
        with open(path, "w") as fh:
            fh.write("index," + ",".join(f"z{k + 1}" for k in range(self.rows.shape[1])) + "\n")
            for i, row in zip(self.index, self.rows):
                fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")
        meta = {"rank": self.rank, "scale": self.scale, "source": self.source, "params": self.meta}
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")

    @classmethod
    def read(cls, path) -> "FeatureEmbedding":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".meta.json").read_text())
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if not header or header[0] != "index":
                raise ValidationError(f"{path}:1: expected header 'index,z1,...'")
            rows, index = [], []
            for lineno, line in enumerate(fh, start=2):
                parts = line.strip().split(",")
                if len(parts) != len(header):
                    raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields")
                try:
                    index.append(int(parts[0]))
                    rows.append([float(v) for v in parts[1:]])
                except ValueError as exc:
                    raise ValidationError(f"{path}:{lineno}: {exc}") from exc
        return cls(np.array(rows).reshape(-1, len(header) - 1), meta["rank"], meta["scale"],
                   meta["source"], meta.get("params", {}), np.array(index, dtype=np.int64))


def _matrix_of(A):
    if isinstance(A, AdjacencyMatrix):
        return A.matrix.astype(float), A.rho
    if sp.issparse(A):
        return A.astype(float), None
    return np.asarray(A, dtype=float), None


def sm_est(A, params: ThresholdParams = ThresholdParams(), rho: float | None = None,
           k: int | None = None, degree_normalize: bool = False) -> FeatureEmbedding:
    """Estimate feature rows from an undirected graph.

    The rank is chosen on the eigenvalues of ``A / rho`` ranked by magnitude;
    the returned rows are ``sqrt(n / rho) * U * S^{1/2}`` with negative retained
    eigenvalues clamped to zero. With ``degree_normalize`` the matrix is replaced
    by ``D^{-1/2} A D^{-1/2}`` times the mean degree, isolated nodes dropped.
    """
    mat, rho_rec = _matrix_of(A)
    rho = rho_rec if rho is None else rho
    if rho is None or not rho > 0:
        raise ValidationError("rho must be supplied (positive) when it is not recorded on the graph")
    index = None
    if degree_normalize:
        mat, index = _normalized_rescaled(mat)
    n = mat.shape[0]
    if n < 2:
        raise ValidationError("graph must have at least two nodes")
    k = min(n, params.max_rank + 1) if k is None else min(n, k)
    eig = symmetric_eigendecomposition(mat, k, order="magnitude")
    # rank selection follows singular values, i.e. eigenvalues by magnitude
    mag_order = np.lexsort((-eig.values, -np.abs(eig.values)))
    sing = np.abs(eig.values[mag_order]) / rho
    threshold = params.threshold(rho, n)
    d, fallback = decide_threshold(sing, threshold, params.max_rank)
    keep = mag_order[:d]
    vals = eig.values[keep]
    if np.all(vals <= 0):
        raise NumericalError("all retained eigenvalues are non-positive")
    rows = math.sqrt(n / rho) * eig.vectors[:, keep] * np.sqrt(np.clip(vals, 0.0, None))
    meta = {"rho": rho, "threshold": threshold, "fallback": fallback,
            "eigenvalues": [float(v) for v in eig.values[mag_order] / rho]}
    meta["degree_normalize"] = degree_normalize
    return FeatureEmbedding(rows, d, math.sqrt(n / rho), "simplified", meta, index)


def bipartite_gram(B, theta: float = -math.inf):
    """``B^T B`` with the diagonal replaced by ``a_ii ** theta`` (zero for ``theta=-inf``)."""
    if theta >= 1:
        raise ValidationError(f"theta must be < 1, got {theta}")
    mat = B.matrix if isinstance(B, BipartiteMatrix) else B
    mat = sp.csr_matrix(mat, dtype=float)
    A = (mat.T @ mat).tocsr()
    diag = A.diagonal()
    if theta == -math.inf:
        new = np.zeros_like(diag)
    else:
        new = np.where(diag > 0, np.power(np.where(diag > 0, diag, 1.0), theta), 0.0)
    A = A - sp.diags(diag) + sp.diags(new)
    A.eliminate_zeros()
    return A.tocsr()


def bipartite_est(B, theta: float = -math.inf, gap_exponent: float = 2.0 / 43.0,
                  max_rank: int = 20, gap_constant: float = 1.0, order: str = "algebraic",
                  degree_normalize: bool = False) -> FeatureEmbedding:
    """Estimate influencer feature rows from a follower-influencer matrix.

    The rank is the largest ``d`` whose gap in the spectrum of ``(n/m) A`` exceeds
    ``gap_constant * (n/m) ** gap_exponent``; rows are ``n^{3/4} m^{-1/4} U S^{1/4}``.
    """
    mat = B.matrix if isinstance(B, BipartiteMatrix) else sp.csr_matrix(B)
    m, n = mat.shape
    if m < n:
        raise ValidationError(f"need at least as many followers as influencers (m={m}, n={n})")
    A = bipartite_gram(mat, theta)
    index = None
    if degree_normalize:
        A, index = _normalized_rescaled(A)
    k = min(A.shape[0], max_rank + 1)
    eig = symmetric_eigendecomposition(A, k, order=order)
    scaled = eig.values * (n / m)
    threshold = gap_constant * (n / m) ** gap_exponent
    gaps = scaled[:-1] - scaled[1:]
    ok = np.nonzero(gaps[:max_rank] > threshold)[0]
    fallback = len(ok) == 0
    if fallback:
        warnings.warn(f"no eigengap exceeds {threshold:.4g}; falling back to d=1", SpectralWarning, stacklevel=2)
    d = 1 if fallback else int(ok[-1]) + 1
    vals = eig.values[:d]
    if np.all(vals <= 0):
        raise NumericalError("all retained eigenvalues are non-positive")
    scale = n ** 0.75 * m ** -0.25
    rows = scale * eig.vectors[:, :d] * np.power(np.clip(vals, 0.0, None), 0.25)
    meta = {"theta": theta if math.isfinite(theta) else "-inf", "gap_exponent": gap_exponent,
            "threshold": threshold, "fallback": fallback, "m": m,
            "eigenvalues": [float(v) for v in scaled], "degree_normalize": degree_normalize}
    return FeatureEmbedding(rows, d, scale, "bipartite", meta, index)


def degree_normalize(A) -> tuple[np.ndarray | sp.csr_matrix, np.ndarray]:
    """``D^{-1/2} A D^{-1/2}`` over rows with positive degree; also returns the kept indices."""
    mat, _ = _matrix_of(A)
    deg = np.asarray(mat.sum(axis=1)).ravel()
    kept = np.nonzero(deg > 0)[0]
    if sp.issparse(mat):
        sub = mat[kept][:, kept]
        s = sp.diags(1.0 / np.sqrt(deg[kept]))
        return (s @ sub @ s).tocsr(), kept
    sub = mat[np.ix_(kept, kept)]
    s = 1.0 / np.sqrt(deg[kept])
    return sub * s[:, None] * s[None, :], kept


def _normalized_rescaled(mat):
    norm, kept = degree_normalize(mat)
    if len(kept) < 2:
        raise NumericalError("fewer than two nodes with positive degree")
    deg = np.asarray(mat.sum(axis=1)).ravel()[kept]
    return norm * float(deg.mean()), kept


def decay_diagnostic(values, i_min: int, i_max: int) -> float:
    """Least-squares slope of ``log lambda_i`` against ``log i`` for 1-based ``i`` in ``[i_min, i_max]``."""
    values = np.asarray(values, dtype=float)
    if i_min < 1 or i_max > len(values) or i_max - i_min < 3:
        raise ValidationError(f"invalid window [{i_min}, {i_max}] for {len(values)} eigenvalues")
    window = values[i_min - 1:i_max]
    if np.any(window <= 0):
        raise ValidationError("eigenvalues in the window must be positive")
    idx = np.arange(i_min, i_max + 1, dtype=float)
    slope, _ = np.polyfit(np.log(idx), np.log(window), 1)
    return float(slope)
