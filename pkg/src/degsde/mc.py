"""Monte Carlo estimates and Laplace-transform quadrature weights."""

from typing import NamedTuple

import numpy as np


class Estimate(NamedTuple):
    """A Monte Carlo value with its standard error.

    ``bias_bound`` collects deterministic error terms (truncated Laplace
    tail, quadrature) that the standard error does not cover.
    """

    value: float
    stderr: float
    bias_bound: float = 0.0

    def within(self, target, z=4.0):
        return abs(self.value - target) <= z * self.stderr + self.bias_bound


def mean_estimate(samples, axis=0, bias_bound=0.0):
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    value = samples.mean(axis=axis)
    if n > 1:
        stderr = samples.std(axis=axis, ddof=1) / np.sqrt(n)
    else:
        stderr = np.full_like(value, np.inf)
    if np.ndim(value) == 0:
        return Estimate(float(value), float(stderr), float(bias_bound))
    return value, stderr


def zscore(a, b):
    se = np.hypot(a.stderr, b.stderr)
    diff = a.value - b.value
    if se == 0.0:
        return 0.0 if diff == 0.0 else float(np.sign(diff) * np.inf)
    return float(diff / se)


def _phi1(u):
    # (1 - e^{-u}) / u, stable near 0
    u = np.asarray(u, dtype=float)
    small = u < 1e-4
    safe = np.where(small, 1.0, u)
    return np.where(small, 1 - u / 2 + u * u / 6 - u**3 / 24, -np.expm1(-safe) / safe)


def _one_minus_phi1(u):
    u = np.asarray(u, dtype=float)
    small = u < 1e-4
    return np.where(small, u / 2 - u * u / 6 + u**3 / 24, 1 - _phi1(u))


def _phi1_minus_exp(u):
    u = np.asarray(u, dtype=float)
    small = u < 1e-4
    return np.where(small, u / 2 - u * u / 3 + u**3 / 8, _phi1(u) - np.exp(-u))


def laplace_weights(times, lam):
    """Weights ``w`` with ``sum_i w_i g(t_i) = int_{t_0}^{t_N} e^{-lam t} g~(t) dt``
    where ``g~`` interpolates ``g`` linearly between nodes.

    The exponential factor is integrated exactly, so ``g = 1`` returns
    ``(e^{-lam t_0} - e^{-lam t_N}) / lam`` to rounding accuracy.
    """
    t = np.asarray(times, dtype=float)
    lam = float(lam)
    if lam <= 0:
        raise ValueError("lam must be positive")
    dt = np.diff(t)
    u = lam * dt
    left = np.exp(-lam * t[:-1]) / lam
    w = np.zeros_like(t)
    w[:-1] += left * _one_minus_phi1(u)
    w[1:] += left * _phi1_minus_exp(u)
    return w
