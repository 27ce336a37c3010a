"""Approximation-guarantee checks, metrics and baselines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.linalg import orthogonal_procrustes
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .errors import NumericalError, ValidationError
from .graphgen import AdjacencyMatrix
from .model import LatentDistribution
from .spectral import symmetric_eigendecomposition

EQ_TOL = 1e-12


@dataclass
class ApproxReport:
    alpha: float
    beta: float
    gamma: float
    alpha_achieved: float
    purity: list[float]
    good_sizes: list[int]
    cluster_sizes: list[int]
    passed: bool
    intervals: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
                "alpha_achieved": self.alpha_achieved, "purity": self.purity,
                "good_sizes": self.good_sizes, "cluster_sizes": self.cluster_sizes,
                "intervals": self.intervals, "pass": self.passed}


def _violations(D: np.ndarray, truth: np.ndarray, beta: float, gamma: float) -> np.ndarray:
    lower = D > truth + EQ_TOL
    upper = truth > (1.0 + beta) * D + gamma + EQ_TOL
    bad = lower | upper
    np.fill_diagonal(bad, False)
    return bad


def good_subset(D, x, beta: float, gamma: float) -> np.ndarray:
    """Positions (into the cluster) of a subset on which every pair satisfies the bound.

    Rows are removed worst-first by total absolute error, a priority that does not
    depend on ``beta`` or ``gamma``, so the subset only grows as either is relaxed.
    """
    D = np.asarray(D, dtype=float)
    x = np.asarray(x, dtype=float)
    truth = np.abs(x[:, None] - x[None, :])
    k = len(x)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    score = np.abs(D - truth).sum(axis=1)
    order = np.lexsort((np.arange(k), -score))
    rank = np.empty(k, dtype=np.int64)
    rank[order] = np.arange(k)
    bad = _violations(D, truth, beta, gamma)
    j, l = np.nonzero(np.triu(bad, 1))
    removed = int(np.max(np.minimum(rank[j], rank[l])) + 1) if len(j) else 0
    return np.sort(order[removed:])


def check_approximation(truth, clusters, distances, alpha: float, beta: float, gamma: float,
                        dist: LatentDistribution | None = None) -> ApproxReport:
    """Test the clusters and distance matrices against the (alpha, beta, gamma) guarantee.

    Each cluster's interval is the support interval holding most of its members;
    with ``dist=None`` or a single interval the containment condition is vacuous.
    """
    x = np.asarray(truth.positions if hasattr(truth, "positions") else truth, dtype=float)
    n = len(x)
    seen = np.zeros(n, dtype=bool)
    for c in clusters:
        c = np.asarray(c, dtype=np.int64)
        if np.any(seen[c]) or len(np.unique(c)) != len(c):
            raise ValidationError("clusters overlap")
        seen[c] = True
    if len(clusters) != len(distances):
        raise ValidationError("one distance matrix per cluster is required")
    use_intervals = dist is not None and len(dist.support_intervals()) > 1
    purity, good, sizes, ivals = [], [], [], []
    for c, D in zip(clusters, distances):
        c = np.asarray(c, dtype=np.int64)
        if np.shape(D) != (len(c), len(c)):
            raise ValidationError("distance matrix does not match cluster size")
        sizes.append(len(c))
        if use_intervals and len(c):
            idx = dist.interval_index(x[c])
            major = int(np.bincount(idx[idx >= 0]).argmax()) if np.any(idx >= 0) else -1
            purity.append(float(np.mean(idx == major)))
            ivals.append(major)
        else:
            purity.append(1.0)
            ivals.append(0)
        good.append(int(len(good_subset(D, x[c], beta, gamma))))
    covered = sum(good)
    alpha_achieved = 1.0 - covered / n if n else 0.0
    passed = all(p == 1.0 for p in purity) and covered >= (1.0 - alpha) * n
    return ApproxReport(alpha, beta, gamma, alpha_achieved, purity, good, sizes, bool(passed), ivals)


def correlations(est, truth) -> dict:
    """Pearson, Spearman and Kendall coefficients; NaN where undefined (constant input)."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape or len(est) < 2:
        raise ValidationError("inputs must have equal length of at least 2")
    if np.ptp(est) == 0 or np.ptp(truth) == 0:
        return {"pearson": math.nan, "spearman": math.nan, "kendall": math.nan, "defined": False}
    return {"pearson": float(stats.pearsonr(est, truth)[0]),
            "spearman": float(stats.spearmanr(est, truth)[0]),
            "kendall": float(stats.kendalltau(est, truth)[0]),
            "defined": True}


def _best_threshold(est, labels):
    u = np.unique(est)
    cands = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0, [u[-1] + 1.0]])
    best = (-1.0, 0.0, 1)
    for thr in cands:
        above = est > thr
        for pol in (1, -1):
            acc = float(np.mean((above if pol == 1 else ~above) == labels))
            if acc > best[0]:
                best = (acc, float(thr), pol)
    return best


def classify_threshold(est, labels, in_sample_fraction: float = 0.5, seed: int = 0) -> dict:
    """Fit a one-sided threshold on a random split and report held-out accuracy.

    Both polarities are tried; among equally accurate thresholds the smallest wins.
    """
    est = np.asarray(est, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if len(est) != len(labels) or len(est) < 2:
        raise ValidationError("est and labels must have equal length of at least 2")
    if not 0 < in_sample_fraction <= 1:
        raise ValidationError("in_sample_fraction must lie in (0, 1]")
    perm = np.random.default_rng(seed).permutation(len(est))
    n_in = max(1, int(round(in_sample_fraction * len(est))))
    tr, te = perm[:n_in], perm[n_in:]
    if labels[tr].all() or not labels[tr].any():
        raise ValidationError("in-sample split contains a single class")
    acc_in, thr, pol = _best_threshold(est[tr], labels[tr])
    if len(te) == 0:
        te = tr
    pred = est[te] > thr if pol == 1 else est[te] <= thr
    return {"threshold": thr, "polarity": pol, "in_sample_accuracy": acc_in,
            "accuracy": float(np.mean(pred == labels[te]))}


def modularity_baseline(A) -> tuple[np.ndarray, bool]:
    """Two-way split by the sign of the leading modularity eigenvector.

    Returns ``(labels, has_structure)``; when the leading eigenvalue is not
    positive every node is placed in group 0.
    """
    mat = A.matrix if isinstance(A, AdjacencyMatrix) else sp.csr_matrix(A)
    mat = mat.astype(float)
    k = np.asarray(mat.sum(axis=1)).ravel()
    two_e = k.sum()
    if two_e == 0:
        raise ValidationError("graph has no edges")
    B = mat.toarray() - np.outer(k, k) / two_e
    eig = symmetric_eigendecomposition(B, 1, order="algebraic")
    lead = eig.values[0]
    if lead <= 1e-10 * max(1.0, abs(B).max()):
        return np.zeros(len(k), dtype=np.int64), False
    return (eig.vectors[:, 0] > 0).astype(np.int64), True


def partition_distance(labels) -> np.ndarray:
    """0/1 dissimilarity induced by a partition."""
    labels = np.asarray(labels)
    return (labels[:, None] != labels[None, :]).astype(float)


@dataclass(frozen=True)
class MDSResult:
    coordinates: np.ndarray
    eigenvalues: np.ndarray
    residual_fraction: float


def hop_distances(A) -> np.ndarray:
    """All-pairs hop counts; unreachable pairs get one more than the largest finite distance."""
    mat = A.matrix if isinstance(A, AdjacencyMatrix) else sp.csr_matrix(A)
    D = csgraph.shortest_path(mat, method="D", directed=False, unweighted=True)
    finite = np.isfinite(D)
    if not finite.all():
        D[~finite] = D[finite].max() + 1.0
    return D


def mds_baseline(D_or_A, dim: int = 1) -> MDSResult:
    """Classical multidimensional scaling; graphs are converted to hop distances first."""
    if isinstance(D_or_A, AdjacencyMatrix):
        D = hop_distances(D_or_A)
    else:
        D = np.asarray(D_or_A, dtype=float)
    n = D.shape[0]
    if D.shape != (n, n) or np.max(np.abs(D - D.T), initial=0.0) > 1e-9:
        raise ValidationError("dissimilarities must form a symmetric square matrix")
    if not 1 <= dim <= n:
        raise ValidationError(f"dim must lie in [1, {n}]")
    J = np.eye(n) - 1.0 / n
    G = -0.5 * J @ (D ** 2) @ J
    G = (G + G.T) / 2.0
    vals, vecs = np.linalg.eigh(G)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    if vals[0] <= 0:
        raise NumericalError("double-centred matrix has no positive eigenvalue")
    top = np.clip(vals[:dim], 0.0, None)
    pos = np.clip(vals, 0.0, None)
    residual = float(pos[dim:].sum() / pos.sum())
    idx = np.argmax(np.abs(vecs[:, :dim]), axis=0)
    signs = np.sign(vecs[idx, np.arange(dim)])
    signs[signs == 0] = 1.0
    return MDSResult(vecs[:, :dim] * signs * np.sqrt(top), vals, residual)


def procrustes_align(est, ref) -> np.ndarray:
    """Rotate/reflect ``est`` onto ``ref`` (columns zero-padded to a common width)."""
    est = np.atleast_2d(np.asarray(est, dtype=float))
    ref = np.atleast_2d(np.asarray(ref, dtype=float))
    width = max(est.shape[1], ref.shape[1])
    e = np.pad(est, ((0, 0), (0, width - est.shape[1])))
    r = np.pad(ref, ((0, 0), (0, width - ref.shape[1])))
    W, _ = orthogonal_procrustes(e, r)
    return e @ W


GOOD_1, GOOD_2, BAD, UNCLEAR = "good-1", "good-2", "bad", "unclear"


def point_quality_oracle(true_features, z_hat, f: float, curve) -> np.ndarray:
    """Label estimated rows by distance to their true feature and to the feature curve.

    ``curve`` is a dense sample of the true feature curve (same width as the rows).
    """
    z = np.atleast_2d(np.asarray(true_features, dtype=float))
    zh = np.atleast_2d(np.asarray(z_hat.rows if hasattr(z_hat, "rows") else z_hat, dtype=float))
    curve = np.atleast_2d(np.asarray(curve, dtype=float))
    if z.shape != zh.shape or curve.shape[1] != z.shape[1]:
        raise ValidationError("true features, estimates and curve must share a width")
    if len(curve) < 1000:
        raise ValidationError("curve must be sampled with at least 1000 points")
    r = 1.0 / math.sqrt(f)
    own = np.linalg.norm(zh - z, axis=1)
    proj, _ = cKDTree(curve).query(zh)
    labels = np.full(len(z), UNCLEAR, dtype=object)
    labels[proj > 4 * r] = BAD
    labels[proj <= r] = GOOD_2
    labels[own <= r] = GOOD_1
    return labels


def in_cluster_pairs(clusters, distances, x) -> tuple[np.ndarray, np.ndarray]:
    """``(true, estimated)`` distances over every unordered in-cluster pair."""
    x = np.asarray(x, dtype=float)
    t_all, e_all = [], []
    for c, D in zip(clusters, distances):
        c = np.asarray(c, dtype=np.int64)
        iu = np.triu_indices(len(c), 1)
        t_all.append(np.abs(x[c][:, None] - x[c][None, :])[iu])
        e_all.append(np.asarray(D)[iu])
    if not t_all:
        return np.empty(0), np.empty(0)
    return np.concatenate(t_all), np.concatenate(e_all)
