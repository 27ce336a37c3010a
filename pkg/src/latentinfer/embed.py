"""Line embedding of per-cluster distances and follower position estimates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .isomap import ClusterDistances, invert_kernel
from .model import Kernel

UNINFORMATIVE = "uninformative"


@dataclass(frozen=True)
class LineEmbedding:
    coordinates: np.ndarray
    anchors: tuple[int, int]
    stress: float
    orientation: int = 1


def _stress(coords: np.ndarray, D: np.ndarray) -> float:
    n = len(coords)
    if n < 2:
        return 0.0
    iu = np.triu_indices(n, 1)
    resid = np.abs(coords[:, None] - coords[None, :])[iu] - D[iu]
    return float(np.sqrt(np.mean(resid ** 2)))


def line_embed(D) -> LineEmbedding:
    """Place points on a line by trilateration from two far-apart anchors."""
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    if D.shape != (n, n):
        raise ValidationError("distance matrix must be square")
    if n == 0:
        return LineEmbedding(np.empty(0), (-1, -1), 0.0)
    if np.any(D < 0) or np.max(np.abs(D - D.T), initial=0.0) > 1e-9 or np.any(np.diag(D) != 0):
        raise ValidationError("distance matrix must be symmetric, nonnegative, zero on the diagonal")
    a = int(np.argmax(D.sum(axis=1)))
    b = int(np.argmax(D[a]))
    dab = D[a, b]
    if dab > 0:
        coords = (D[a] ** 2 + dab ** 2 - D[b] ** 2) / (2.0 * dab)
    else:
        coords = np.zeros(n)
    return LineEmbedding(coords, (a, b), _stress(coords, D))


def embed_clusters(cd: ClusterDistances, features: np.ndarray | None = None,
                   kernel: Kernel | None = None) -> tuple[np.ndarray, np.ndarray, list[LineEmbedding]]:
    """Line-embed every cluster and lay clusters out along one axis.

    Clusters are not mutually aligned by the distance estimates. As a heuristic,
    clusters are chained greedily by mean estimated kernel value (inner products
    of ``features`` rows, indexed by node id) and separated by the inverted mean
    kernel; without features they are stacked
    with unit gaps in manifest order. Returns ``(coordinates, cluster_labels, per_cluster)``
    with NaN coordinates for left-out nodes.
    """
    coords = np.full(cd.n, np.nan)
    labels = cd.labels()
    embs = [line_embed(D) for D in cd.distances]
    local = [e.coordinates - (e.coordinates.min() if len(e.coordinates) else 0.0) for e in embs]
    k = len(cd.clusters)
    if k == 0:
        return coords, labels, embs
    order, gaps = [0], []
    if features is not None and kernel is not None and k > 1:
        centroids = np.array([features[c].mean(axis=0) for c in cd.clusters])
        mean_k = centroids @ centroids.T
        remaining = set(range(1, k))
        while remaining:
            last = order[-1]
            nxt = max(sorted(remaining), key=lambda c: mean_k[last, c])
            val = float(np.clip(mean_k[last, nxt], 1e-12, kernel.max_value))
            gaps.append(invert_kernel(val, kernel))
            order.append(nxt)
            remaining.remove(nxt)
    else:
        order = list(range(k))
        gaps = [1.0] * (k - 1)
    offset = 0.0
    for pos, c in enumerate(order):
        coords[cd.clusters[c]] = local[c] + offset
        extent = float(local[c].max()) if len(local[c]) else 0.0
        if pos < len(gaps):
            offset += extent + gaps[pos]
    return coords, labels, embs


def _grid(eps: float) -> np.ndarray:
    if not 0 < eps <= 0.5:
        raise ValidationError(f"grid spacing must lie in (0, 0.5], got {eps}")
    steps = int(np.floor(1.0 / eps + 1e-9))
    grid = np.arange(steps + 1) * eps
    return grid if grid[-1] >= 1.0 - 1e-12 else np.append(grid, 1.0)


def follower_loglik(B_rows, x_hat, kernel: Kernel, grid: np.ndarray, n: int | None = None) -> np.ndarray:
    """Log-likelihood of every grid point for every follower row (``m x len(grid)``).

    ``n`` is the influencer count setting the link probability ``kappa / n``;
    it defaults to ``len(x_hat)``.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    n = len(x_hat) if n is None else n
    p = kernel(grid[:, None], x_hat[None, :]) / n
    if np.any(p >= 1):
        raise ValidationError("edge probabilities reach 1; kernel too large for n")
    log_on, log_off = np.log(p), np.log1p(-p)
    B = sp.csr_matrix(np.atleast_2d(B_rows) if not sp.issparse(B_rows) else B_rows, dtype=float)
    return np.asarray(B @ (log_on - log_off).T) + log_off.sum(axis=1)[None, :]


def follower_mle(B_rows, x_hat, kernel: Kernel, grid_eps: float = 0.01, n: int | None = None) -> np.ndarray:
    """Grid maximum-likelihood position for each follower; NaN where the row is empty.

    Ties go to the smaller coordinate.
    """
    grid = _grid(grid_eps)
    B = sp.csr_matrix(np.atleast_2d(B_rows) if not sp.issparse(B_rows) else B_rows)
    ll = follower_loglik(B, x_hat, kernel, grid, n)
    out = grid[np.argmax(ll, axis=1)]
    out[np.diff(B.indptr) == 0] = np.nan
    return out


def follower_neighbor_mean(B_rows, x_hat) -> np.ndarray:
    """Mean coordinate of each follower's linked influencers; NaN for empty rows."""
    x_hat = np.asarray(x_hat, dtype=float)
    B = sp.csr_matrix(np.atleast_2d(B_rows) if not sp.issparse(B_rows) else B_rows, dtype=float)
    deg = np.diff(B.indptr)
    sums = B @ x_hat
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(deg > 0, sums / np.where(deg > 0, deg, 1), np.nan)


def write_coordinates(path, coords, clusters, methods) -> None:
    with open(path, "w") as fh:
        fh.write("index,cluster,coordinate,method\n")
        for i, (x, c, m) in enumerate(zip(coords, clusters, methods)):
            val = "nan" if not np.isfinite(x) else repr(float(x))
            fh.write(f"{i},{int(c)},{val},{m}\n")


def read_coordinates(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    coords, clusters, methods = [], [], []
    with open(path) as fh:
        if fh.readline().strip() != "index,cluster,coordinate,method":
            raise ValidationError(f"{path}:1: expected header 'index,cluster,coordinate,method'")
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != 4:
                raise ValidationError(f"{path}:{lineno}: expected 4 fields")
            try:
                clusters.append(int(parts[1]))
                coords.append(float(parts[2]))
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            methods.append(parts[3])
    return np.array(coords), np.array(clusters, dtype=np.int64), methods
