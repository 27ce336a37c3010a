"""Sampling realized graphs from the simplified and bipartite latent-space models.

Simplified model: nodes ``i < j`` are linked with probability
``kappa(x_i, x_j) * rho / n``. Bipartite model: follower ``j`` links influencer
``i`` with probability ``kappa(y_j, x_i) / n``.

Each Bernoulli decision uses the uniform at a fixed position of a Philox stream
(row-major over the full matrix), so a graph depends only on the seed and the
latent positions, never on the chunking used to build it.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import rng
from .errors import ValidationError
from .model import Kernel, LatentSample

DENSE_LIMIT = 4096
_CHUNK_ENTRIES = 1 << 22


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Undirected simple graph on ``n`` nodes generated at density ``rho``."""

    n: int
    matrix: sp.csr_matrix
    rho: float | None = None

    @classmethod
    def from_edges(cls, n: int, edges, rho: float | None = None) -> "AdjacencyMatrix":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise ValidationError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValidationError("self-loops are not allowed")
        rows = np.concatenate([edges[:, 0], edges[:, 1]])
        cols = np.concatenate([edges[:, 1], edges[:, 0]])
        mat = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
        mat.sum_duplicates()
        mat.data[:] = 1
        mat.sort_indices()
        return cls(n, mat, rho)

    @classmethod
    def from_dense(cls, dense, rho: float | None = None) -> "AdjacencyMatrix":
        dense = np.asarray(dense)
        i, j = np.nonzero(np.triu(dense, 1))
        return cls.from_edges(dense.shape[0], np.column_stack([i, j]), rho)

    @property
    def num_edges(self) -> int:
        return int(self.matrix.nnz // 2)

    def degrees(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def neighbors(self, i: int) -> np.ndarray:
        m = self.matrix
        return m.indices[m.indptr[i]:m.indptr[i + 1]]

    def edges(self) -> np.ndarray:
        """Edge list with ``i < j``, sorted lexicographically."""
        coo = sp.triu(self.matrix, 1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.column_stack([coo.row[order], coo.col[order]]).astype(np.int64)

    def to_dense(self, limit: int = DENSE_LIMIT) -> np.ndarray:
        if self.n > limit:
            raise ValidationError(f"n={self.n} exceeds the dense limit {limit}")
        return self.matrix.toarray().astype(float)


@dataclass(frozen=True)
class BipartiteMatrix:
    """Binary ``m x n`` follower-influencer matrix."""

    m: int
    n: int
    matrix: sp.csr_matrix

    @classmethod
    def from_edges(cls, m: int, n: int, edges) -> "BipartiteMatrix":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges[:, 0].min() < 0 or edges[:, 0].max() >= m
                           or edges[:, 1].min() < 0 or edges[:, 1].max() >= n):
            raise ValidationError("edge endpoint out of range")
        mat = sp.csr_matrix((np.ones(len(edges), dtype=np.int8), (edges[:, 0], edges[:, 1])), shape=(m, n))
        mat.sum_duplicates()
        mat.data[:] = 1
        mat.sort_indices()
        return cls(m, n, mat)

    @classmethod
    def from_dense(cls, dense) -> "BipartiteMatrix":
        dense = np.asarray(dense)
        j, i = np.nonzero(dense)
        return cls.from_edges(dense.shape[0], dense.shape[1], np.column_stack([j, i]))

    @property
    def num_edges(self) -> int:
        return int(self.matrix.nnz)

    def edges(self) -> np.ndarray:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.column_stack([coo.row[order], coo.col[order]]).astype(np.int64)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray().astype(float)


def _positions(sample) -> np.ndarray:
    return np.asarray(sample.positions if isinstance(sample, LatentSample) else sample, dtype=float)


def generate_simplified(sample, kernel: Kernel, rho: float, seed: int) -> AdjacencyMatrix:
    """Sample the simplified model: pair ``{i, j}`` present w.p. ``kappa(x_i, x_j) rho / n``."""
    x = _positions(sample)
    n = len(x)
    if not rho > 0:
        raise ValidationError(f"rho must be positive, got {rho}")
    if rho > n:
        raise ValidationError(f"rho={rho} exceeds n={n}")
    scale = rho / n
    rows_per_chunk = max(1, _CHUNK_ENTRIES // n)
    src, dst = [], []
    for r0 in range(0, n, rows_per_chunk):
        r1 = min(n, r0 + rows_per_chunk)
        p = kernel(x[r0:r1, None], x[None, :]) * scale
        if p.max() > 1.0 + 1e-12:
            i, j = np.unravel_index(np.argmax(p), p.shape)
            raise ValidationError(
                f"edge probability {p.max():.6g} > 1 for pair ({r0 + i}, {j}); lower rho or kernel scale")
        u = rng.uniform_stream(seed, rng.SIMPLIFIED_EDGES, r0 * n, (r1 - r0) * n).reshape(r1 - r0, n)
        upper = np.arange(r0, r1)[:, None] < np.arange(n)[None, :]
        i, j = np.nonzero((u < p) & upper)
        src.append(i + r0)
        dst.append(j)
    edges = np.column_stack([np.concatenate(src), np.concatenate(dst)]) if src else np.empty((0, 2))
    return AdjacencyMatrix.from_edges(n, edges, rho)


def generate_bipartite(x_sample, y_sample, kernel: Kernel, seed: int) -> BipartiteMatrix:
    """Sample the bipartite model: follower ``j`` links influencer ``i`` w.p. ``kappa(y_j, x_i) / n``."""
    x = _positions(x_sample)
    y = _positions(y_sample)
    n, m = len(x), len(y)
    if kernel.max_value / n > 1.0:
        raise ValidationError(f"kappa_max / n = {kernel.max_value / n:.6g} > 1; edge probabilities invalid")
    rows_per_chunk = max(1, _CHUNK_ENTRIES // n)
    src, dst = [], []
    for r0 in range(0, m, rows_per_chunk):
        r1 = min(m, r0 + rows_per_chunk)
        p = kernel(y[r0:r1, None], x[None, :]) / n
        u = rng.uniform_stream(seed, rng.BIPARTITE_EDGES, r0 * n, (r1 - r0) * n).reshape(r1 - r0, n)
        j, i = np.nonzero(u < p)
        src.append(j + r0)
        dst.append(i)
    return BipartiteMatrix.from_edges(m, n, np.column_stack([np.concatenate(src), np.concatenate(dst)]))


def expected_kernel_matrix(sample, kernel: Kernel, limit: int = DENSE_LIMIT) -> np.ndarray:
    """Dense ``K`` with ``K_ij = kappa(x_i, x_j)``."""
    x = _positions(sample)
    if len(x) > limit:
        raise ValidationError(f"n={len(x)} exceeds the dense limit {limit}")
    return kernel.matrix(x)


# -- edge-list files -------------------------------------------------------

def write_edge_list(path, graph: AdjacencyMatrix | BipartiteMatrix) -> None:
    with open(path, "w") as fh:
        if isinstance(graph, AdjacencyMatrix):
            rho = "none" if graph.rho is None else repr(float(graph.rho))
            fh.write(f"# simplified n={graph.n} rho={rho}\n")
        else:
            fh.write(f"# bipartite m={graph.m} n={graph.n}\n")
        for a, b in graph.edges():
            fh.write(f"{a}\t{b}\n")


def _parse_header(line: str, path) -> tuple[str, dict]:
    parts = line.strip().split()
    if len(parts) < 2 or parts[0] != "#" or parts[1] not in ("simplified", "bipartite"):
        raise ValidationError(f"{path}:1: malformed header {line.strip()!r}; "
                              "expected '# simplified n=<n> rho=<rho>' or '# bipartite m=<m> n=<n>'")
    kind = parts[1]
    fields = {}
    for tok in parts[2:]:
        if "=" not in tok:
            raise ValidationError(f"{path}:1: malformed header field {tok!r}")
        key, val = tok.split("=", 1)
        fields[key] = val
    need = ("n", "rho") if kind == "simplified" else ("m", "n")
    for key in need:
        if key not in fields:
            raise ValidationError(f"{path}:1: header missing field {key!r}")
    try:
        out = {"n": int(fields["n"])}
        if kind == "bipartite":
            out["m"] = int(fields["m"])
        else:
            out["rho"] = None if fields["rho"] == "none" else float(fields["rho"])
    except ValueError as exc:
        raise ValidationError(f"{path}:1: malformed header value ({exc})") from exc
    return kind, out


def read_edge_list(path) -> AdjacencyMatrix | BipartiteMatrix:
    """Load an edge list; the model is chosen from the header line, not the extension."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline()
        kind, meta = _parse_header(header, path)
        edges = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split("\t")
            try:
                a, b = int(parts[0]), int(parts[1])
            except (IndexError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed edge line {line.rstrip()!r}") from exc
            if len(parts) != 2:
                raise ValidationError(f"{path}:{lineno}: expected two tab-separated fields")
            edges.append((a, b))
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
    if kind == "simplified":
        if len(edges) and np.any(edges[:, 0] >= edges[:, 1]):
            bad = int(np.argmax(edges[:, 0] >= edges[:, 1]))
            raise ValidationError(f"{path}:{bad + 2}: simplified edges must satisfy i < j")
        return AdjacencyMatrix.from_edges(meta["n"], edges, meta["rho"])
    return BipartiteMatrix.from_edges(meta["m"], meta["n"], edges)
