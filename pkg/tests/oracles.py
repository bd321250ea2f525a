"""Independent reference computations shared by the test modules."""

from fractions import Fraction

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm


def exact_rank(M):
    """Rank by fraction-exact Gaussian elimination."""
    rows = [[Fraction(int(v)) for v in row] for row in M]
    rank, ncols = 0, len(rows[0]) if rows else 0
    for c in range(ncols):
        piv = next((r for r in range(rank, len(rows)) if rows[r][c] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        for r in range(len(rows)):
            if r != rank and rows[r][c] != 0:
                f = rows[r][c] / rows[rank][c]
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[rank])]
        rank += 1
    return rank


def brute_force_kalman(A, d0):
    """Smallest ``j`` with ``rank [P, AP, ..., A^j P] = d`` for the integer
    matrix ``A``, or ``None``."""
    d = A.shape[0]
    A = np.asarray(A).astype(object)
    blocks = []
    P = np.eye(d, dtype=object)[:, :d0]
    for j in range(d):
        blocks.append(P)
        if exact_rank(np.hstack(blocks)) == d:
            return j
        P = A.dot(P)
    return None


def gramian_quad(A, Q, t):
    """``int_0^t e^{sA} Q e^{sA^T} ds`` by adaptive quadrature."""
    return quad_vec(lambda s: expm(s * A) @ Q @ expm(s * A).T, 0.0, t, epsabs=1e-14, epsrel=1e-12)[0]


def gauss_expectation(mean, cov, center=None, width=1.0):
    """``E exp(-|X - c|^2 / (2 w^2))`` for ``X ~ N(mean, cov)``."""
    d = len(mean)
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    w2 = width**2
    u = np.asarray(mean) - c
    S = w2 * np.eye(d) + cov
    return np.sqrt(w2**d / np.linalg.det(S)) * np.exp(-0.5 * u @ np.linalg.solve(S, u))
