"""Kernels, latent distributions and quadrature oracles for the latent-space model.

The small-world kernel is ``kappa(x, y) = c0 / (|x - y|**delta + c1)``. Latent
positions are drawn from a distribution on [0, 1] that mixes point masses and
uniform pieces; two equal atoms give a two-block SBM, a single uniform piece
gives the classic small-world model.

The integral operator ``(K f)(x) = int kappa(x, z) f(z) dF(z)`` is never needed by
the inference pipeline. It is evaluated here by quadrature and used as an
independent oracle in tests and diagnostics.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng
from .errors import NumericalError, ValidationError

WEIGHT_TOL = 1e-12
PANEL_ORDER = 16


@dataclass(frozen=True)
class Kernel:
    """Small-world kernel ``c0 / (|x - y|**delta + c1)``."""

    c0: float = 1.0
    c1: float = 1.0
    delta: float = 2.0

    def __post_init__(self):
        if not (self.c0 > 0 and self.c1 > 0):
            raise ValidationError(f"kernel constants must be positive, got c0={self.c0}, c1={self.c1}")
        if not self.delta >= 1:
            raise ValidationError(f"kernel exponent delta must be at least 1, got {self.delta}")

    @property
    def max_value(self) -> float:
        return self.c0 / self.c1

    @property
    def normalized(self) -> bool:
        """True when ``kappa(x, x) == 1``, i.e. ``c0 == c1``."""
        return self.c0 == self.c1

    def __call__(self, x, y):
        return self.c0 / (np.abs(np.subtract(x, y)) ** self.delta + self.c1)

    def matrix(self, x, y=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = x if y is None else np.asarray(y, dtype=float)
        return self(x[:, None], y[None, :])


def kernel_eval(kernel: Kernel, x: float, y: float) -> float:
    return float(kernel(x, y))


def feature_distance_sq(kernel: Kernel, x, y):
    """Squared feature-space distance ``||Phi(x) - Phi(y)||**2 = 2 - 2 kappa(x, y)``.

    Only valid for normalized kernels (``c0 == c1``), where ``kappa(x, x) = 1``.
    """
    if not kernel.normalized:
        raise ValidationError("feature_distance_sq requires c0 == c1 so that kappa(x, x) = 1")
    return 2.0 - 2.0 * kernel(x, y)


@dataclass(frozen=True)
class LatentDistribution:
    """Mixture of point masses and uniform pieces on [0, 1].

    ``components`` holds ``(a, b, weight)`` triples; ``a == b`` is an atom at ``a``,
    ``a < b`` is weight spread uniformly over ``[a, b]``.
    """

    components: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        comps = tuple(sorted((float(a), float(b), float(w)) for a, b, w in self.components))
        if not comps:
            raise ValidationError("distribution needs at least one component")
        for a, b, w in comps:
            if not (0.0 <= a <= b <= 1.0):
                raise ValidationError(f"component [{a}, {b}] is not inside [0, 1]")
            if not w > 0:
                raise ValidationError(f"component weights must be positive, got {w}")
        total = sum(w for _, _, w in comps)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"weights must sum to 1 (within {WEIGHT_TOL}), got {total!r}")
        for (a0, b0, _), (a1, b1, _) in zip(comps, comps[1:]):
            # pieces may touch but not overlap; atoms must be distinct
            if a1 < b0 or (a1 == b0 and (a0 == b0 or a1 == b1)):
                raise ValidationError(f"components [{a0}, {b0}] and [{a1}, {b1}] overlap")
        object.__setattr__(self, "components", comps)

    @classmethod
    def uniform(cls, a: float = 0.0, b: float = 1.0) -> "LatentDistribution":
        return cls(((a, b, 1.0),))

    @classmethod
    def atoms(cls, locations: Sequence[float], weights: Sequence[float] | None = None) -> "LatentDistribution":
        if weights is None:
            weights = [1.0 / len(locations)] * len(locations)
        return cls(tuple((x, x, w) for x, w in zip(locations, weights)))

    @classmethod
    def piecewise_uniform(cls, intervals: Sequence[tuple[float, float]],
                          weights: Sequence[float]) -> "LatentDistribution":
        for a, b in intervals:
            if not a < b:
                raise ValidationError(f"interval [{a}, {b}] is empty")
        return cls(tuple((a, b, w) for (a, b), w in zip(intervals, weights)))

    @property
    def kind(self) -> str:
        if all(a == b for a, b, _ in self.components):
            return "discrete-atoms"
        if len(self.components) == 1 and self.components[0][:2] == (0.0, 1.0):
            return "uniform"
        return "piecewise-uniform"

    def support_intervals(self) -> list[tuple[float, float]]:
        """Closed support intervals; touching pieces are merged."""
        out: list[list[float]] = []
        for a, b, _ in self.components:
            if out and a <= out[-1][1] and a != b and out[-1][0] != out[-1][1]:
                out[-1][1] = max(out[-1][1], b)
            else:
                out.append([a, b])
        return [(a, b) for a, b in out]

    def interval_index(self, x) -> np.ndarray:
        """Index of the support interval containing each position (-1 if none)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.full(x.shape, -1, dtype=int)
        for k, (a, b) in enumerate(self.support_intervals()):
            idx[(x >= a - 1e-12) & (x <= b + 1e-12)] = k
        return idx

    def density_lower_bound(self) -> float:
        """Smallest density over the continuous pieces (inf when purely atomic)."""
        dens = [w / (b - a) for a, b, w in self.components if b > a]
        return min(dens) if dens else float("inf")

    def inverse_cdf(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        comps = self.components
        w = np.array([c[2] for c in comps])
        cum = np.concatenate(([0.0], np.cumsum(w)))
        k = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(comps) - 1)
        a = np.array([c[0] for c in comps])[k]
        b = np.array([c[1] for c in comps])[k]
        frac = np.clip((u - cum[k]) / w[k], 0.0, 1.0)
        return a + frac * (b - a)

    def quadrature(self, q: int = 512) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights integrating against dF.

        Each uniform piece gets ``q`` composite Gauss-Legendre nodes (panels of
        order 16); each atom contributes a single exact node.
        """
        if q < PANEL_ORDER:
            raise ValidationError(f"need at least {PANEL_ORDER} quadrature points, got {q}")
        nodes, weights = [], []
        for a, b, w in self.components:
            if a == b:
                nodes.append(np.array([a]))
                weights.append(np.array([w]))
                continue
            u, g = _composite_gauss_legendre(a, b, q)
            nodes.append(u)
            weights.append(g * w / (b - a))
        return np.concatenate(nodes), np.concatenate(weights)

    def describe(self) -> str:
        parts = []
        for a, b, w in self.components:
            loc = f"{a!r}" if a == b else f"{a!r}-{b!r}"
            parts.append(f"{loc}@{w!r}")
        return ";".join(parts)

    @classmethod
    def parse(cls, text: str) -> "LatentDistribution":
        """Parse ``uniform``, ``atoms:0,1`` or ``a-b@w;c@w;...`` descriptors."""
        text = text.strip()
        if text == "uniform":
            return cls.uniform()
        if text.startswith("atoms:"):
            locs = [float(s) for s in text[len("atoms:"):].split(",") if s.strip()]
            return cls.atoms(locs)
        comps = []
        try:
            for part in text.split(";"):
                loc, w = part.split("@")
                if "-" in loc:
                    a, b = loc.split("-", 1)
                    comps.append((float(a), float(b), float(w)))
                else:
                    comps.append((float(loc), float(loc), float(w)))
        except ValueError as exc:
            raise ValidationError(f"cannot parse distribution {text!r}") from exc
        return cls(tuple(comps))


def _composite_gauss_legendre(a: float, b: float, q: int) -> tuple[np.ndarray, np.ndarray]:
    panels = q // PANEL_ORDER
    extra = q - panels * PANEL_ORDER
    edges = np.linspace(a, b, panels + 1)
    nodes, weights = [], []
    for p in range(panels):
        t, g = np.polynomial.legendre.leggauss(PANEL_ORDER + (1 if p < extra else 0))
        lo, hi = edges[p], edges[p + 1]
        nodes.append(lo + (hi - lo) * (t + 1.0) / 2.0)
        weights.append(g * (hi - lo) / 2.0)
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True)
class OperatorQuadrature:
    """Symmetrized quadrature discretization ``W^1/2 k(u_i, u_j) W^1/2`` of an integral operator."""

    nodes: np.ndarray
    weights: np.ndarray
    matrix: np.ndarray

    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        try:
            vals, vecs = np.linalg.eigh(self.matrix)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"quadrature eigensolver failed: {exc}") from exc
        order = np.argsort(vals)[::-1]
        vecs = vecs[:, order]
        # deterministic sign: largest-magnitude entry positive
        pivots = np.argmax(np.abs(vecs), axis=0)
        vecs = vecs * np.sign(vecs[pivots, np.arange(vecs.shape[1])])
        return vals[order], vecs


def operator_quadrature(kernel: Kernel, dist: LatentDistribution, q: int = 512) -> OperatorQuadrature:
    u, w = dist.quadrature(q)
    sw = np.sqrt(w)
    mat = sw[:, None] * kernel.matrix(u) * sw[None, :]
    return OperatorQuadrature(u, w, 0.5 * (mat + mat.T))


def mu_eval(kernel: Kernel, dist: LatentDistribution, x, y, q: int = 512):
    """Squared kernel ``mu(x, y) = int kappa(x, z) kappa(z, y) dF(z)`` by quadrature."""
    u, w = dist.quadrature(q)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    kx = kernel(x[..., None], u)
    ky = kernel(y[..., None], u)
    out = np.sum(kx * ky * w, axis=-1)
    return float(out) if out.ndim == 0 else out


def mu_matrix(kernel: Kernel, dist: LatentDistribution, x, y=None, q: int = 512) -> np.ndarray:
    """Matrix of ``mu(x_i, y_j)`` computed with a ``q``-point inner quadrature."""
    u, w = dist.quadrature(q)
    kx = kernel.matrix(x, u)
    ky = kx if y is None else kernel.matrix(y, u)
    return (kx * w) @ ky.T


def mu_operator_quadrature(kernel: Kernel, dist: LatentDistribution, q: int = 512,
                           q_inner: int | None = None) -> OperatorQuadrature:
    """Quadrature discretization of the squared-kernel operator.

    ``mu`` is evaluated with its own inner rule of ``q_inner`` points (default
    ``2 q``) so the result is not algebraically the square of the ``kappa`` matrix.
    """
    u, w = dist.quadrature(q)
    sw = np.sqrt(w)
    mu = mu_matrix(kernel, dist, u, q=q_inner or 2 * q)
    mat = sw[:, None] * mu * sw[None, :]
    return OperatorQuadrature(u, w, 0.5 * (mat + mat.T))


def operator_eigenvalues(kernel: Kernel, dist: LatentDistribution, q: int = 512, k: int = 20) -> np.ndarray:
    """Top-``k`` eigenvalues of the kernel integral operator, descending."""
    quad = operator_quadrature(kernel, dist, q)
    size = quad.matrix.shape[0]
    if k > q and k > size:
        raise ValidationError(f"k={k} exceeds the number of quadrature nodes")
    vals, _ = quad.eigh()
    out = np.zeros(k)
    out[: min(k, size)] = vals[:k]
    return out


@dataclass(frozen=True)
class LatentSample:
    positions: np.ndarray
    seed: int
    distribution: LatentDistribution

    def __len__(self):
        return len(self.positions)


def sample_latents(dist: LatentDistribution, n: int, seed: int, stream: int = rng.LATENTS) -> LatentSample:
    """Draw ``n`` i.i.d. positions; position ``i`` depends only on ``(seed, i)``."""
    if n < 1:
        raise ValidationError(f"n must be at least 1, got {n}")
    total = sum(w for _, _, w in dist.components)
    if abs(total - 1.0) > WEIGHT_TOL:
        raise ValidationError(f"weights must sum to 1, got {total!r}")
    u = rng.uniform_stream(seed, stream, 0, n)
    return LatentSample(dist.inverse_cdf(u), int(seed), dist)


def mercer_features(kernel: Kernel, dist: LatentDistribution, positions, d: int, q: int = 512) -> np.ndarray:
    """Reference truncated feature map ``Phi_d`` at ``positions`` via Nystrom extension.

    Column ``j`` is ``sqrt(lambda_j) psi_j(x)``; eigenpairs come from the
    quadrature operator and ``psi_j`` is extended off the nodes with
    ``psi_j(x) = lambda_j^-1 int kappa(x, z) psi_j(z) dF(z)``.
    """
    if isinstance(positions, LatentSample):
        positions = positions.positions
    x = np.atleast_1d(np.asarray(positions, dtype=float))
    quad = operator_quadrature(kernel, dist, q)
    size = quad.matrix.shape[0]
    if d > max(q, size):
        raise ValidationError(f"d={d} exceeds the number of quadrature nodes")
    vals, vecs = quad.eigh()
    keep = min(d, size)
    vals, vecs = vals[:keep], vecs[:, :keep]
    live = vals > vals[0] * 1e-13
    out = np.zeros((len(x), d))
    kx = kernel.matrix(x, quad.nodes) * np.sqrt(quad.weights)
    out[:, :keep][:, live] = (kx @ vecs[:, live]) / np.sqrt(vals[live])
    return out


def write_latents_csv(path, sample: LatentSample | np.ndarray) -> None:
    positions = sample.positions if isinstance(sample, LatentSample) else np.asarray(sample)
    with open(path, "w", newline="") as fh:
        fh.write("index,position\n")
        for i, x in enumerate(positions):
            fh.write(f"{i},{float(x)!r}\n")


def read_latents_csv(path) -> np.ndarray:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["index", "position"]:
            raise ValidationError(f"{path}:1: expected header 'index,position', got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                idx, pos = int(row[0]), float(row[1])
            except (IndexError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed row {row}") from exc
            if idx != len(rows):
                raise ValidationError(f"{path}:{lineno}: expected index {len(rows)}, got {idx}")
            rows.append(pos)
    return np.array(rows)
