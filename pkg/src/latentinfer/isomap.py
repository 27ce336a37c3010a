"""Denoising, neighbourhood graphs and hop-count distance estimates on feature rows."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .errors import NumericalError, ValidationError
from .model import Kernel
from .spectral import FeatureEmbedding

# Above this many rows the calibrated radius is estimated from an evenly spaced subsample.
PERCENTILE_SAMPLE = 4096


@dataclass(frozen=True)
class IsomapParams:
    """``f=None`` resolves to ``rho ** (2/87)`` when a density is known."""

    f: float | None = None
    ell: float = 10.0
    mode: str = "calibrated"
    percentile: float = 10.0
    cutoff_fraction: float = 0.2
    min_cluster: int = 5

    def __post_init__(self):
        if self.mode not in ("theory", "calibrated"):
            raise ValidationError(f"mode must be 'theory' or 'calibrated', got {self.mode!r}")
        if not self.ell > 3:
            raise ValidationError(f"ell must exceed 3, got {self.ell}")
        if self.f is not None and not self.f > 0:
            raise ValidationError(f"f must be positive, got {self.f}")
        if not 0 < self.percentile < 100:
            raise ValidationError(f"percentile must lie in (0, 100), got {self.percentile}")
        if not 0 < self.cutoff_fraction <= 1:
            raise ValidationError(f"cutoff_fraction must lie in (0, 1], got {self.cutoff_fraction}")
        if self.min_cluster < 1:
            raise ValidationError("min_cluster must be at least 1")

    def resolve_f(self, rho: float | None = None) -> float:
        if self.f is not None:
            return float(self.f)
        if rho is None:
            raise ValidationError("f is unset and no density rho is available to derive it")
        return float(rho) ** (2.0 / 87.0)


def _rows(embedding) -> np.ndarray:
    rows = embedding.rows if isinstance(embedding, FeatureEmbedding) else embedding
    return np.atleast_2d(np.asarray(rows, dtype=float))


def _rho(embedding):
    return embedding.meta.get("rho") if isinstance(embedding, FeatureEmbedding) else None


def percentile_radius(rows: np.ndarray, percentile: float) -> float:
    n = len(rows)
    if n < 2:
        return 0.0
    if n > PERCENTILE_SAMPLE:
        rows = rows[np.linspace(0, n - 1, PERCENTILE_SAMPLE).astype(int)]
    return float(np.percentile(pdist(rows), percentile))


def ball_counts(rows: np.ndarray, radius: float) -> np.ndarray:
    """Number of rows (self included) within closed distance ``radius`` of each row."""
    tree = cKDTree(rows)
    return np.asarray(tree.query_ball_point(rows, radius, return_length=True), dtype=np.int64)


@dataclass(frozen=True)
class DenoiseResult:
    kept: np.ndarray
    radius: float
    cutoff: float
    counts: np.ndarray


def denoise(embedding, params: IsomapParams, f: float | None = None) -> DenoiseResult:
    """Drop rows whose neighbourhood is too sparse.

    Theory mode keeps ``i`` iff at least ``ceil(n/f)`` rows lie within ``3/sqrt(f)``.
    Calibrated mode uses the percentile radius and a fraction of the median count.
    """
    rows = _rows(embedding)
    n = len(rows)
    if n < 1:
        raise ValidationError("embedding has no rows")
    if params.mode == "theory":
        f = params.resolve_f(_rho(embedding)) if f is None else f
        radius = 3.0 / math.sqrt(f)
        cutoff = float(math.ceil(n / f))
    else:
        radius = percentile_radius(rows, params.percentile)
    counts = ball_counts(rows, radius)
    if params.mode == "calibrated":
        cutoff = params.cutoff_fraction * float(np.median(counts))
    kept = np.nonzero(counts >= cutoff)[0]
    return DenoiseResult(kept, radius, cutoff, counts)


@dataclass(frozen=True)
class NeighborGraph:
    kept: np.ndarray
    adjacency: sp.csr_matrix  # over positions in ``kept``
    radius: float


def graph_radius(embedding, params: IsomapParams, f: float | None = None) -> float:
    if params.mode == "theory":
        f = params.resolve_f(_rho(embedding)) if f is None else f
        return params.ell / math.sqrt(f)
    return percentile_radius(_rows(embedding), params.percentile)


def build_neighbor_graph(embedding, kept, params: IsomapParams, radius: float | None = None,
                         f: float | None = None) -> NeighborGraph:
    """Closed-ball radius graph over the kept rows."""
    kept = np.asarray(kept, dtype=np.int64)
    if len(kept) == 0:
        raise ValidationError("kept set is empty")
    radius = graph_radius(embedding, params, f) if radius is None else radius
    pts = _rows(embedding)[kept]
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    k = len(kept)
    adj = sp.coo_matrix((np.ones(len(pairs), dtype=np.int8), (pairs[:, 0], pairs[:, 1])), shape=(k, k))
    adj = (adj + adj.T).tocsr()
    adj.sort_indices()
    return NeighborGraph(kept, adj, float(radius))


def connected_components(graph: NeighborGraph, min_cluster: int = 1) -> tuple[list[np.ndarray], np.ndarray]:
    """Components as sorted arrays of original indices, ordered by smallest member.

    Components smaller than ``min_cluster`` are returned separately as left out.
    """
    k = len(graph.kept)
    if k == 0:
        return [], np.empty(0, dtype=np.int64)
    _, labels = csgraph.connected_components(graph.adjacency, directed=False)
    comps = {}
    for pos, lab in enumerate(labels):
        comps.setdefault(lab, []).append(graph.kept[pos])
    clusters, left = [], []
    for members in sorted((sorted(c) for c in comps.values()), key=lambda c: c[0]):
        (clusters if len(members) >= min_cluster else left).append(np.array(members, dtype=np.int64))
    left_out = np.sort(np.concatenate(left)) if left else np.empty(0, dtype=np.int64)
    return clusters, left_out


def shortest_path_hops(graph: NeighborGraph, cluster) -> np.ndarray:
    """All-pairs unweighted hop counts inside one connected cluster."""
    pos = np.searchsorted(graph.kept, np.asarray(cluster, dtype=np.int64))
    sub = graph.adjacency[pos][:, pos]
    dist = csgraph.shortest_path(sub, method="D", directed=False, unweighted=True)
    if not np.all(np.isfinite(dist)):
        raise NumericalError("cluster is not connected")
    return dist.astype(np.int64)


def distance_step(params: IsomapParams, kernel: Kernel, f: float | None = None,
                  radius: float | None = None) -> float:
    """Distance assigned to each hop beyond the first."""
    if not kernel.normalized:
        raise ValidationError("hop conversion needs a normalized kernel (c0 == c1)")
    if params.mode == "theory":
        if f is None:
            raise ValidationError("theory mode needs f")
        base = (params.ell - 3.0) / math.sqrt(f)
    else:
        if radius is None:
            raise ValidationError("calibrated mode needs the graph radius")
        base = (1.0 - 3.0 / params.ell) * radius
    return (kernel.c0 / 2.0) ** (1.0 / kernel.delta) * base ** (2.0 / kernel.delta)


def hops_to_distance(hops, params: IsomapParams, kernel: Kernel, f: float | None = None,
                     radius: float | None = None) -> np.ndarray:
    step = distance_step(params, kernel, f, radius)
    hops = np.asarray(hops)
    return np.where(hops >= 1, (hops - 1) * step, 0.0).astype(float)


def sandwich_upper_step(ell: float, f: float, kernel: Kernel) -> float:
    """Per-hop latent distance ceiling for the two-sided hop bound."""
    return (kernel.c0 / 2.0) ** (1.0 / kernel.delta) * ((ell + 8.0) / math.sqrt(f)) ** (2.0 / kernel.delta)


@dataclass
class ClusterDistances:
    n: int
    clusters: list[np.ndarray]
    hops: list[np.ndarray]
    distances: list[np.ndarray]
    left_out: np.ndarray
    meta: dict = field(default_factory=dict)

    def labels(self) -> np.ndarray:
        out = np.full(self.n, -1, dtype=np.int64)
        for c, members in enumerate(self.clusters):
            out[members] = c
        return out

    def reindex(self, index, n: int) -> "ClusterDistances":
        """Map row positions back to original node ids out of ``n``."""
        index = np.asarray(index, dtype=np.int64)
        dropped = np.setdiff1d(np.arange(n), index)
        return ClusterDistances(n, [index[c] for c in self.clusters], self.hops, self.distances,
                                np.union1d(index[self.left_out], dropped), dict(self.meta))

    def write(self, directory) -> None:
        """``clusters.csv`` manifest plus ``distances_<c>.csv`` per cluster."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "clusters.csv", "w") as fh:
            fh.write("index,cluster\n")
            for i, lab in enumerate(self.labels()):
                fh.write(f"{i},{lab}\n")
        for c, (members, D) in enumerate(zip(self.clusters, self.distances)):
            with open(directory / f"distances_{c}.csv", "w") as fh:
                fh.write("index," + ",".join(str(i) for i in members) + "\n")
                for i, row in zip(members, D):
                    fh.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def read(cls, directory) -> "ClusterDistances":
        directory = Path(directory)
        manifest = directory / "clusters.csv"
        labels = []
        with open(manifest) as fh:
            if fh.readline().strip() != "index,cluster":
                raise ValidationError(f"{manifest}:1: expected header 'index,cluster'")
            for lineno, line in enumerate(fh, start=2):
                try:
                    idx, lab = (int(v) for v in line.strip().split(","))
                except ValueError as exc:
                    raise ValidationError(f"{manifest}:{lineno}: malformed line {line.strip()!r}") from exc
                if idx != len(labels):
                    raise ValidationError(f"{manifest}:{lineno}: indices must be consecutive from 0")
                labels.append(lab)
        labels = np.array(labels, dtype=np.int64)
        clusters, distances = [], []
        for c in range(labels.max() + 1 if len(labels) else 0):
            path = directory / f"distances_{c}.csv"
            with open(path) as fh:
                header = [int(v) for v in fh.readline().strip().split(",")[1:]]
                rows = [[float(v) for v in line.strip().split(",")[1:]] for line in fh]
            members = np.array(header, dtype=np.int64)
            if not np.array_equal(members, np.nonzero(labels == c)[0]):
                raise ValidationError(f"{path}: members disagree with the manifest")
            clusters.append(members)
            distances.append(np.array(rows).reshape(len(members), len(members)))
        return cls(len(labels), clusters, [], distances, np.nonzero(labels < 0)[0])


def isomap_algo(embedding, params: IsomapParams, kernel: Kernel, f: float | None = None) -> ClusterDistances:
    """Denoise, build the radius graph, split into components and convert hops to distances."""
    rows = _rows(embedding)
    n = len(rows)
    if params.mode == "theory" and f is None:
        f = params.resolve_f(_rho(embedding))
    dn = denoise(rows, params, f)
    if len(dn.kept) == 0:
        raise NumericalError("denoising removed every row")
    radius = dn.radius * params.ell / 3.0 if params.mode == "theory" else dn.radius
    graph = build_neighbor_graph(rows, dn.kept, params, radius=radius)
    clusters, small = connected_components(graph, params.min_cluster)
    if not clusters:
        raise NumericalError("no cluster reaches the minimum size")
    hops = [shortest_path_hops(graph, c) for c in clusters]
    dists = [hops_to_distance(h, params, kernel, f, radius) for h in hops]
    removed = np.setdiff1d(np.arange(n), dn.kept)
    meta = {"mode": params.mode, "f": f, "radius": radius, "denoise_radius": dn.radius,
            "denoise_cutoff": dn.cutoff, "removed": int(len(removed)), "kept": int(len(dn.kept)),
            "step": distance_step(params, kernel, f, radius), "small_components": int(len(small))}
    return ClusterDistances(n, clusters, hops, dists, np.union1d(removed, small), meta)


def invert_kernel(khat: float, kernel: Kernel) -> float:
    """Latent distance whose kernel value is ``khat``."""
    if not 0 < khat <= kernel.max_value:
        raise ValidationError(f"khat={khat} outside (0, {kernel.max_value}]")
    return max(kernel.c0 / khat - kernel.c1, 0.0) ** (1.0 / kernel.delta)
