"""Path simulation for ``dZ = A Z dt + lift(b0(Z)) dt + lift(B0(Z)) dW``.

Three schemes share one engine: Euler-Maruyama, the exponential (mild
form) Euler scheme, and the dyadic frozen-coefficient scheme.  Coefficient
evaluators are vectorised over a leading batch axis:

* ``b0(Z)``: ``(n, d) -> (n, d0)``
* ``B0(Z)``: ``(n, d) -> (n, d0, r)``
* ``Q0(Z)``: ``(n, d) -> (n, d0, d0)``
"""

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import matcore, streams
from .ensemble import Ball, PathEnsemble, concat_blocks
from .errors import CapabilityError, EvaluationError, HypothesisViolation, InvalidInputError
from .fields import ScalarField
from .mc import mean_estimate

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True, eq=False)
class SDEModel:
    A: np.ndarray
    d0: int
    b0: Callable | None = None
    B0: Callable | None = None
    Q0: Callable | None = None
    r: int | None = None
    phi: ScalarField | None = None
    C: float | None = None
    name: str = "model"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        A = matcore.as_square(self.A, "A")
        object.__setattr__(self, "A", A)
        d0 = int(self.d0)
        if not 1 <= d0 <= A.shape[0]:
            raise InvalidInputError(f"d0 must satisfy 1 <= d0 <= d={A.shape[0]}, got {d0}")
        object.__setattr__(self, "d0", d0)
        if self.B0 is None and self.Q0 is None:
            raise InvalidInputError("one of B0 or Q0 is required")
        if self.r is None:
            object.__setattr__(self, "r", d0 if self.B0 is None else None)
        if self.r is None:
            probe = np.asarray(self.B0(np.zeros((1, A.shape[0]))))
            object.__setattr__(self, "r", int(probe.shape[-1]))

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def has_drift(self):
        return self.b0 is not None

    @property
    def kalman(self):
        return matcore.kalman_index(self.A, self.d0)

    def drift0(self, Z):
        Z = np.asarray(Z, dtype=float)
        if self.b0 is None:
            return np.zeros(Z.shape[:-1] + (self.d0,))
        return np.asarray(self.b0(Z), dtype=float).reshape(Z.shape[:-1] + (self.d0,))

    def diffusion_matrix(self, Z):
        """``Q0(Z)``, shape ``(..., d0, d0)``."""
        Z = np.asarray(Z, dtype=float)
        if self.Q0 is not None:
            return np.asarray(self.Q0(Z), dtype=float).reshape(Z.shape[:-1] + (self.d0, self.d0))
        B = self.diffusion_factor(Z)
        return B @ np.swapaxes(B, -1, -2)

    def diffusion_factor(self, Z):
        """``B0(Z)``, shape ``(..., d0, r)``; from a Cholesky factor of
        ``Q0`` when only ``Q0`` is given."""
        Z = np.asarray(Z, dtype=float)
        if self.B0 is not None:
            return np.asarray(self.B0(Z), dtype=float).reshape(Z.shape[:-1] + (self.d0, self.r))
        Q = self.diffusion_matrix(Z)
        try:
            return np.linalg.cholesky(Q)
        except np.linalg.LinAlgError:
            w = np.linalg.eigvalsh(Q)
            bad = np.argmin(w.reshape(-1, self.d0)[:, 0])
            raise HypothesisViolation(
                "Q0 is not positive definite", witness=Z.reshape(-1, self.d)[bad]
            ) from None

    def generator(self, f, Z):
        """``L f(Z) = 1/2 Tr(Q0 D_x^2 f) + <A Z, D f> + <b0, D_x f>``."""
        Z = np.asarray(Z, dtype=float)
        d0 = self.d0
        g = f.gradient(Z)
        H = f.hessian(Z)
        Q = self.diffusion_matrix(Z)
        out = 0.5 * np.einsum("...ij,...ji->...", Q, H[..., :d0, :d0])
        out = out + np.einsum("...i,...i->...", Z @ self.A.T, g)
        if self.b0 is not None:
            out = out + np.einsum("...i,...i->...", self.drift0(Z), g[..., :d0])
        return out

    def with_drift(self, b0, name=None):
        return replace(self, b0=b0, name=name or self.name)


def constant_model(A, Q0, b0=None, name="ou-constant"):
    """Model with constant diffusion matrix ``Q0`` and optional constant drift."""
    A = matcore.as_square(A)
    Q0 = np.atleast_2d(np.asarray(Q0, dtype=float))
    d0 = Q0.shape[0]
    B = matcore.psd_factor(Q0)
    r = B.shape[1]
    drift = None
    if b0 is not None:
        c = np.asarray(b0, dtype=float).reshape(d0)
        drift = lambda Z: np.broadcast_to(c, Z.shape[:-1] + (d0,))
    return SDEModel(
        A=A,
        d0=d0,
        b0=drift,
        B0=lambda Z: np.broadcast_to(B, Z.shape[:-1] + (d0, r)),
        Q0=lambda Z: np.broadcast_to(Q0, Z.shape[:-1] + (d0, d0)),
        r=r,
        name=name,
        meta={"Q0": Q0.tolist(), "b0": None if b0 is None else np.ravel(b0).tolist()},
    )


# ---------------------------------------------------------------------------
# step kernels


def _step_grid(h, T):
    h, T = float(h), float(T)
    if not h > 0:
        raise InvalidInputError(f"step h must be positive, got {h}")
    if not T >= h * (1 - 1e-12):
        raise InvalidInputError(f"horizon T={T} must be at least h={h}")
    n_steps = int(np.ceil(T / h - 1e-9))
    times = np.minimum(np.arange(n_steps + 1) * h, T)
    times[-1] = T
    return times


class _EulerKernel:
    """State layout inside kernels is ``(d, n)``."""

    def __init__(self, model):
        self.m = model

    def prepare(self, h):
        return float(h)

    def noise_shape(self, nb):
        return (self.m.r, nb)

    def step(self, Z, b, B, xi, h):
        m = self.m
        out = Z + h * (m.A @ Z)
        sh = np.sqrt(h)
        for j in range(m.d0):
            noise = B[:, j, 0] * xi[0]
            for k in range(1, m.r):
                noise += B[:, j, k] * xi[k]
            out[j] += h * b[:, j] + sh * noise
        return out


class _ExpKernel:
    """Exact frozen-coefficient OU step.

    With ``P`` the ``d x d0`` lift, the noise
    ``int_0^h e^{(h-s)A} P B0 dW_s = sum_k Y_k B0[:, k]`` where, for each
    Wiener component ``k``, ``vec(Y_k) ~ N(0, S_h)`` and
    ``S_h = int_0^h vec(e^{sA} P) vec(e^{sA} P)^T ds`` is the Gramian of
    ``(I_d0 (x) A, vec(P) vec(P)^T)``.  Its covariance is exactly
    ``gramian(A, P B0 B0^T P^T, h)``.
    """

    def __init__(self, model):
        self.m = model

    def prepare(self, h):
        E, Phi0, F = frozen_step_matrices(self.m.A, self.m.d0, h)
        return E, Phi0, F

    def noise_shape(self, nb):
        m = self.m
        return (m.r, m.d * m.d0, nb)

    def step(self, Z, b, B, xi, mats):
        m = self.m
        E, Phi0, F = mats
        out = E @ Z + Phi0 @ b.T
        rank = F.shape[1]
        for k in range(m.r):
            Y = (F @ xi[k, :rank]).reshape(m.d0, m.d, -1)
            for j in range(m.d0):
                out += Y[j] * B[:, j, k]
        return out


def frozen_step_matrices(A, d0, h):
    """``(e^{hA}, (int_0^h e^{sA} ds)[:, :d0], factor of S_h)`` for one
    exponential step of length ``h``."""
    A = matcore.as_square(A)
    d = A.shape[0]
    E = matcore.mat_exp(A, h)
    Phi0 = matcore.integrated_exp(A, h)[:, :d0]
    P = np.eye(d)[:, :d0]
    vecP = P.T.reshape(-1)
    big_A = np.kron(np.eye(d0), A)
    S = matcore.gramian(big_A, np.outer(vecP, vecP), h)
    return E, Phi0, matcore.psd_factor(S)


def frozen_noise_covariance(A, d0, B0, h):
    """Covariance of the exponential-step noise for a fixed ``B0``; equals
    ``gramian(A, lift(B0 B0^T), h)``."""
    A = matcore.as_square(A)
    d = A.shape[0]
    _, _, F = frozen_step_matrices(A, d0, h)
    S = F @ F.T
    B0 = np.atleast_2d(np.asarray(B0, dtype=float))
    blocks = S.reshape(d0, d, d0, d)
    return np.einsum("idje,ik,jk->de", blocks, B0, B0)


# ---------------------------------------------------------------------------
# engine


def _simulate(model, kernel, z0, times, n, seed, *, freeze=None, domain=None,
              record_every=1, workers=1, scheme="", monitor_center=None, params=None):
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (model.d,):
        raise InvalidInputError(f"z0 must have shape ({model.d},)")
    n = int(n)
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    n_steps = times.size - 1
    record_every = int(record_every)
    if record_every < 1 or n_steps % record_every:
        raise InvalidInputError("record_every must divide the number of steps")
    hs = np.diff(times)
    prepared = {}
    for h in np.unique(hs):
        prepared[h] = kernel.prepare(h)
    step_mats = [prepared[h] for h in hs]
    n_rec = n_steps // record_every + 1
    center = np.zeros(model.d) if monitor_center is None else np.asarray(monitor_center, float)
    d, d0 = model.d, model.d0
    zero_b = np.zeros((streams.BLOCK_SIZE, d0))

    def block(rng, nb):
        Z = np.repeat(z0[:, None], nb, axis=1)
        states = np.empty((nb, n_rec, d))
        states[:, 0] = z0
        exit_time = np.full(nb, np.inf)
        stopped = np.zeros(nb, bool)
        diverged = np.zeros(nb, bool)
        c = center[:, None]
        runmax = np.full(nb, np.linalg.norm(z0 - center))
        if domain is not None and domain.outside(z0):
            stopped[:] = True
            exit_time[:] = 0.0
        frozen_at = Z
        all_active = not stopped.any()
        for i in range(n_steps):
            if freeze is not None and freeze(i):
                frozen_at = Z.copy()
            coeff_at = (Z if freeze is None else frozen_at).T
            xi = rng.standard_normal(kernel.noise_shape(nb))
            with np.errstate(all="ignore"):
                b = model.drift0(coeff_at) if model.has_drift else zero_b[:nb]
                B = model.diffusion_factor(coeff_at)
                Znew = kernel.step(Z, b, B, xi, step_mats[i])
            sq = np.einsum("dn,dn->n", Znew, Znew)
            bad = ~(sq <= DIVERGENCE_NORM**2)
            if all_active and not bad.any():
                Z = Znew
            else:
                active = ~(stopped | diverged)
                diverged |= bad & active
                move = active & ~bad
                Z = np.where(move, Znew, Z)
                all_active = bool(move.all())
            if monitor_center is None:
                np.maximum(runmax, np.sqrt(np.einsum("dn,dn->n", Z, Z)), out=runmax)
            else:
                dz = Z - c
                np.maximum(runmax, np.sqrt(np.einsum("dn,dn->n", dz, dz)), out=runmax)
            if domain is not None:
                dz = Z - domain.center[:, None]
                out = ~stopped & ~diverged & (np.einsum("dn,dn->n", dz, dz) >= domain.radius**2)
                if out.any():
                    exit_time[out] = times[i + 1]
                    stopped |= out
                    all_active = False
            if (i + 1) % record_every == 0:
                states[:, (i + 1) // record_every] = Z.T
        return {"states": states, "exit_time": exit_time, "stopped": stopped,
                "diverged": diverged, "max_excursion": runmax}

    res = concat_blocks(streams.map_blocks(block, n, seed, workers))
    p = {"record_every": record_every, "block_size": streams.BLOCK_SIZE}
    if domain is not None:
        p["domain"] = {"center": domain.center.tolist(), "radius": domain.radius}
    p.update(params or {})
    return PathEnsemble(
        times=times[::record_every].copy(),
        states=res["states"],
        exit_time=res["exit_time"],
        stopped=res["stopped"],
        diverged=res["diverged"],
        max_excursion=res["max_excursion"],
        seed=int(seed),
        scheme=scheme,
        step=float(hs.max()),
        z0=z0,
        params=p,
    )


def euler_maruyama(model, z0, h, T, n, seed, *, domain=None, record_every=1, workers=1):
    """``Z += (A Z + lift b0(Z)) h + lift(B0(Z)) sqrt(h) xi``."""
    times = _step_grid(h, T)
    return _simulate(model, _EulerKernel(model), z0, times, n, seed, domain=domain,
                     record_every=record_every, workers=workers, scheme="euler",
                     params={"h": float(h), "T": float(T)})


def exp_euler(model, z0, h, T, n, seed, *, domain=None, record_every=1, workers=1):
    """``Z <- e^{hA} Z + (int_0^h e^{sA} ds) lift b0(Z) + N(0, gramian(A, lift Q0(Z), h))``.

    Exact in law when ``b0`` and ``Q0`` are constant."""
    times = _step_grid(h, T)
    return _simulate(model, _ExpKernel(model), z0, times, n, seed, domain=domain,
                     record_every=record_every, workers=workers, scheme="exp-euler",
                     params={"h": float(h), "T": float(T)})


def frozen_dyadic_scheme(model, level, z0, n, seed, *, T=None, substeps=1, domain=None,
                         record_every=1, workers=1):
    """Dyadic frozen-coefficient scheme of level ``m = level``.

    On ``[k/2^m, (k+1)/2^m)`` the diffusion is frozen at ``Z_{k/2^m ^ m}``
    and the path follows the exact OU update with that diffusion.  ``T``
    defaults to ``m``; beyond time ``m`` the coefficients stay frozen at
    ``Z_m``.  ``substeps`` refines the output grid inside each dyadic
    interval without changing the freezing points.
    """
    if model.has_drift:
        raise CapabilityError("frozen_dyadic_scheme requires b0 == 0; use exp_euler for models with drift")
    level = int(level)
    if level < 1:
        raise InvalidInputError("level must be >= 1")
    substeps = int(substeps)
    T = float(level if T is None else T)
    dyadic = 2.0**-level
    times = _step_grid(dyadic / substeps, T)
    # freeze at the start of each dyadic interval until the cap at time m
    cap_step = int(round(level / dyadic)) * substeps

    def freeze(i):
        return i % substeps == 0 and i <= cap_step

    return _simulate(model, _ExpKernel(model), z0, times, n, seed, freeze=freeze, domain=domain,
                     record_every=record_every, workers=workers, scheme="frozen-dyadic",
                     params={"level": level, "T": T, "substeps": substeps})


SCHEMES = {
    "euler": euler_maruyama,
    "exp-euler": exp_euler,
}


def stop_on_exit(scheme, domain, model, z0, *args, **kwargs):
    """Run ``scheme`` with paths frozen at the first grid time outside
    ``domain`` (a :class:`Ball`, or ``(center, radius)``)."""
    if not isinstance(domain, Ball):
        center, radius = domain
        domain = Ball(center, radius)
    if not domain.radius > 0:
        raise InvalidInputError("domain radius must be positive")
    if isinstance(scheme, str):
        scheme = SCHEMES[scheme]
    return scheme(model, z0, *args, domain=domain, **kwargs)


# ---------------------------------------------------------------------------
# Lyapunov monitoring and exit probabilities


@dataclass(frozen=True)
class LyapunovReport:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    bound: np.ndarray
    violations: np.ndarray
    C: float

    @property
    def n_violations(self):
        return int(np.sum(self.violations))

    def to_dict(self):
        return {
            "times": self.times.tolist(), "mean": self.mean.tolist(),
            "stderr": self.stderr.tolist(), "bound": self.bound.tolist(),
            "violations": [float(t) for t in self.times[self.violations]], "C": self.C,
        }


def lyapunov_monitor(ens, phi, C):
    """Empirical ``E phi(Z_{t ^ tau})`` against ``phi(z0) e^{C t}``.

    A time is flagged when the empirical mean minus three standard errors
    still exceeds the bound."""
    vals = np.asarray(phi(ens.states), dtype=float)
    if not np.all(np.isfinite(vals)):
        p, t = np.argwhere(~np.isfinite(vals))[0]
        raise EvaluationError("phi is not finite at a visited state",
                              point=ens.states[p, t], where={"path": int(p), "time_index": int(t)})
    mean, stderr = mean_estimate(vals)
    bound = float(phi(ens.z0[None, :])[0]) * np.exp(float(C) * ens.times)
    violations = mean - 3 * stderr > bound
    return LyapunovReport(ens.times, mean, stderr, bound, violations, float(C))


@dataclass(frozen=True)
class ExitCurve:
    radii: np.ndarray
    prob: np.ndarray
    stderr: np.ndarray
    horizon: float

    def to_dict(self):
        return {"radii": self.radii.tolist(), "prob": self.prob.tolist(),
                "stderr": self.stderr.tolist(), "horizon": self.horizon}


def exit_probabilities(ens, radii):
    """``P(tau_R <= T)`` for balls ``B(center, R)`` from the running
    excursion maxima of one ensemble."""
    radii = np.asarray(radii, dtype=float)
    hits = ens.max_excursion[:, None] >= radii[None, :]
    p = hits.mean(axis=0)
    n = hits.shape[0]
    se = np.sqrt(p * (1 - p) / max(n - 1, 1))
    return ExitCurve(radii, p, se, ens.horizon)


def exit_prob_curve(model, z0, radii, t, h, n, seed, scheme="euler", center=None, workers=1):
    """Estimates of ``P(tau_k <= t)`` for the balls ``B(center, R_k)``.

    All radii are evaluated on the same simulated paths (a path leaves
    ``B(R)`` before ``t`` iff its running excursion reaches ``R``), so the
    curve is monotone by construction."""
    radii = np.asarray(radii, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    c = np.zeros_like(z0) if center is None else np.asarray(center, dtype=float)
    if radii.ndim != 1 or np.any(np.diff(radii) <= 0):
        raise InvalidInputError("radii must be strictly increasing")
    if np.any(radii <= np.linalg.norm(z0 - c)):
        raise InvalidInputError("every radius must exceed |z0 - center|")
    fn = SCHEMES[scheme] if isinstance(scheme, str) else scheme
    times = _step_grid(h, t)
    kernel = _EulerKernel(model) if fn is euler_maruyama else _ExpKernel(model)
    ens = _simulate(model, kernel, z0, times, n, seed, record_every=times.size - 1,
                    workers=workers, scheme=getattr(fn, "__name__", "scheme"), monitor_center=c)
    return exit_probabilities(ens, radii)
