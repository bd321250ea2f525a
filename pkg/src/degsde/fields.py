"""Scalar test functions with analytic gradients and Hessians, and the
versioned default battery used for law comparisons.

All evaluators are vectorised: they take an array of states with shape
``(..., d)`` and return shape ``(...)``, ``(..., d)`` or ``(..., d, d)``.
"""

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import CapabilityError, EvaluationError

BATTERY_VERSION = "1"


@dataclass(frozen=True)
class ScalarField:
    func: Callable
    grad: Callable | None = None
    hess: Callable | None = None
    sup_norm: float = np.inf
    label: str = "f"

    def __call__(self, z):
        return self.func(np.asarray(z, dtype=float))

    def evaluate(self, z):
        """Like calling the field, but raise :class:`EvaluationError` with
        the offending point if any value is non-finite."""
        z = np.asarray(z, dtype=float)
        with np.errstate(all="ignore"):
            v = np.asarray(self.func(z), dtype=float)
        bad = ~np.isfinite(v)
        if np.any(bad):
            idx = np.unravel_index(np.argmax(bad), bad.shape)
            raise EvaluationError(f"{self.label} is not finite", point=z[idx], where=idx)
        return v

    def gradient(self, z):
        if self.grad is None:
            raise CapabilityError(f"{self.label} has no gradient evaluator")
        return self.grad(np.asarray(z, dtype=float))

    def hessian(self, z):
        if self.hess is None:
            raise CapabilityError(f"{self.label} has no Hessian evaluator")
        return self.hess(np.asarray(z, dtype=float))

    def scaled(self, c, label=None):
        c = float(c)
        return ScalarField(
            func=lambda z: c * self.func(z),
            grad=None if self.grad is None else (lambda z: c * self.grad(z)),
            hess=None if self.hess is None else (lambda z: c * self.hess(z)),
            sup_norm=abs(c) * self.sup_norm,
            label=label or f"{c:g}*{self.label}",
        )

    def relabel(self, label):
        return replace(self, label=label)


def constant(c, d, label=None):
    c = float(c)
    return ScalarField(
        func=lambda z: np.full(z.shape[:-1], c),
        grad=lambda z: np.zeros(z.shape),
        hess=lambda z: np.zeros(z.shape + (d,)),
        sup_norm=abs(c),
        label=label or f"const({c:g})",
    )


def linear(a, label=None):
    a = np.asarray(a, dtype=float)
    d = a.size
    return ScalarField(
        func=lambda z: z @ a,
        grad=lambda z: np.broadcast_to(a, z.shape).copy(),
        hess=lambda z: np.zeros(z.shape + (d,)),
        label=label or "linear",
    )


def squared_norm(d, label="sqnorm"):
    return ScalarField(
        func=lambda z: np.sum(z * z, axis=-1),
        grad=lambda z: 2.0 * z,
        hess=lambda z: np.broadcast_to(2.0 * np.eye(d), z.shape + (d,)).copy(),
        label=label,
    )


def lyapunov_quadratic(d, label="phi"):
    """``phi(z) = 1 + |z|^2``."""
    return ScalarField(
        func=lambda z: 1.0 + np.sum(z * z, axis=-1),
        grad=lambda z: 2.0 * z,
        hess=lambda z: np.broadcast_to(2.0 * np.eye(d), z.shape + (d,)).copy(),
        label=label,
    )


def gaussian_bump(center, width=1.0, height=1.0, label=None):
    c = np.asarray(center, dtype=float)
    d = c.size
    w2 = float(width) ** 2
    height = float(height)

    def func(z):
        u = z - c
        return height * np.exp(-0.5 * np.sum(u * u, axis=-1) / w2)

    def grad(z):
        return -(func(z)[..., None]) * (z - c) / w2

    def hess(z):
        u = z - c
        f = func(z)[..., None, None]
        return f * (u[..., :, None] * u[..., None, :] / w2**2 - np.eye(d) / w2)

    return ScalarField(func, grad, hess, sup_norm=abs(height), label=label or "gauss")


def _poly_bump(u):
    # (1 - u^2)^3 on |u| < 1, zero outside: C^2 with compact support
    inside = np.abs(u) < 1
    s = np.where(inside, 1 - u * u, 0.0)
    g = s**3
    g1 = -6 * u * s**2
    g2 = -6 * s**2 + 24 * u * u * s
    return g, np.where(inside, g1, 0.0), np.where(inside, g2, 0.0)


def compact_bump(center, radius=1.0, label=None):
    """Product of one-dimensional ``(1 - ((z_i - c_i)/radius)^2)^3`` bumps."""
    c = np.asarray(center, dtype=float)
    d = c.size
    R = float(radius)

    def parts(z):
        return _poly_bump((z - c) / R)

    def func(z):
        g, _, _ = parts(z)
        return np.prod(g, axis=-1)

    def grad(z):
        g, g1, _ = parts(z)
        out = np.empty(z.shape)
        for i in range(d):
            others = np.prod(np.delete(g, i, axis=-1), axis=-1)
            out[..., i] = g1[..., i] / R * others
        return out

    def hess(z):
        g, g1, g2 = parts(z)
        out = np.empty(z.shape + (d,))
        for i in range(d):
            for j in range(d):
                if i == j:
                    others = np.prod(np.delete(g, i, axis=-1), axis=-1)
                    out[..., i, i] = g2[..., i] / R**2 * others
                else:
                    others = np.prod(np.delete(g, [i, j], axis=-1), axis=-1)
                    out[..., i, j] = g1[..., i] * g1[..., j] / R**2 * others
        return out

    return ScalarField(func, grad, hess, sup_norm=1.0, label=label or "cbump")


def cosine_wave(freq, phase=0.0, origin=None, label=None):
    """``cos(<freq, z - origin> + phase)``."""
    w = np.asarray(freq, dtype=float)
    o = np.zeros_like(w) if origin is None else np.asarray(origin, dtype=float)
    phase = float(phase)

    def arg(z):
        return (z - o) @ w + phase

    return ScalarField(
        func=lambda z: np.cos(arg(z)),
        grad=lambda z: -np.sin(arg(z))[..., None] * w,
        hess=lambda z: -np.cos(arg(z))[..., None, None] * np.outer(w, w),
        sup_norm=1.0,
        label=label or "cos",
    )


def default_battery(d, origin=None, scale=1.0):
    """The six-member battery (version ``BATTERY_VERSION``).

    Three Gaussian bumps around ``origin``, two compactly supported
    polynomial bumps and one cosine wave, all bounded with known sup-norm
    and analytic derivatives up to order two.
    """
    o = np.zeros(d) if origin is None else np.asarray(origin, dtype=float)
    s = float(scale)
    diag = np.ones(d) / np.sqrt(d)
    return [
        gaussian_bump(o, width=s, label="gauss0"),
        gaussian_bump(o + s * diag, width=s, label="gauss+"),
        gaussian_bump(o - s * diag, width=s, label="gauss-"),
        compact_bump(o, radius=2 * s, label="cbump0"),
        compact_bump(o + 0.5 * s * np.ones(d), radius=1.5 * s, label="cbump+"),
        cosine_wave(1.0 / (s * np.arange(1, d + 1)), origin=o, label="cos"),
    ]
