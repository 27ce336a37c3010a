"""Independent reference computations used only by the tests.

Each oracle deliberately avoids the code path it checks: closed forms, exact
integer arithmetic, brute force, or a different numerical library.
"""
from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np
from scipy import integrate


def mu_uniform_closed_form(x: float, y: float) -> float:
    """Squared kernel at ``x == y`` for c0=c1=1, delta=2, uniform F.

    With u = z - x, the integrand is (1+u^2)^-2 whose antiderivative is
    u/(2(1+u^2)) + atan(u)/2.
    """
    assert x == y

    def anti(u):
        return u / (2 * (1 + u * u)) + math.atan(u) / 2

    return anti(1 - x) - anti(-x)


def mu_adaptive(x: float, y: float, c0=1.0, c1=1.0, delta=2.0) -> float:
    def k(a, b):
        return c0 / (abs(a - b) ** delta + c1)

    val, _ = integrate.quad(lambda z: k(x, z) * k(z, y), 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, points=[x, y])
    return val


def mean_kernel_uniform() -> float:
    """E kappa(x, x') for independent uniforms, c0=c1=1, delta=2: 2 * int_0^1 (1-h)/(1+h^2) dh."""
    return 2 * (math.pi / 4 - math.log(2) / 2)


def mean_kernel_against(x: float, c0=1.0, c1=1.0, delta=2.0) -> float:
    val, _ = integrate.quad(lambda z: c0 / (abs(x - z) ** delta + c1), 0.0, 1.0, points=[x])
    return val


def _poly_mul(p, q):
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a:
            for j, b in enumerate(q):
                out[i + j] += a * b
    return out


def charpoly_integer(M) -> list[int]:
    """Coefficients (lowest degree first) of det(lambda I - M) for an integer matrix, via Leibniz."""
    n = len(M)
    total = [0] * (n + 1)
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        sign = -1 if inv % 2 else 1
        prod = [sign]
        for i in range(n):
            entry = [-int(M[i][perm[i]]), 1 if perm[i] == i else 0]
            prod = _poly_mul(prod, entry)
        for k, c in enumerate(prod):
            total[k] += c
    return total


def eigenvalues_charpoly(M_int, scale: float) -> np.ndarray:
    """Eigenvalues of ``M_int / scale`` (symmetric integer ``M_int``) as roots of the exact charpoly."""
    coeffs = charpoly_integer(M_int)
    with mpmath.workdps(60):
        roots = mpmath.polyroots([mpmath.mpf(c) for c in reversed(coeffs)], maxsteps=500, extraprec=400)
        vals = sorted((float(mpmath.re(r)) / scale for r in roots), reverse=True)
    return np.array(vals)


def floyd_warshall(adj: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    D = np.where(adj > 0, 1.0, np.inf)
    np.fill_diagonal(D, 0.0)
    for k in range(n):
        D = np.minimum(D, D[:, k:k + 1] + D[k:k + 1, :])
    return D


def brute_force_mle(row, x_hat, c0, c1, delta, eps) -> float:
    """Plain-loop grid search; returns the smallest maximiser."""
    n = len(x_hat)
    best, arg = -math.inf, None
    steps = int(round(1 / eps))
    for s in range(steps + 1):
        y = s * eps
        ll = 0.0
        for b, x in zip(row, x_hat):
            p = c0 / (abs(y - x) ** delta + c1) / n
            ll += math.log(p) if b else math.log1p(-p)
        if ll > best + 1e-12:
            best, arg = ll, y
    return arg


def kendall_by_enumeration(a, b) -> float:
    n = len(a)
    conc = disc = 0
    for i in range(n):
        for j in range(i + 1, n):
            s = (a[i] - a[j]) * (b[i] - b[j])
            conc += s > 0
            disc += s < 0
    return (conc - disc) / (n * (n - 1) / 2)
