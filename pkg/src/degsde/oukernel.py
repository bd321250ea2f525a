"""Exact analytics and sampling for the constant-coefficient hypoelliptic
Ornstein-Uhlenbeck process ``dZ = A Z dt + sqrt(Q) dW`` with
``Q = diag-block(Q0, 0)``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import matcore, streams
from .ensemble import PathEnsemble, concat_blocks
from .errors import CapabilityError, EvaluationError, InvalidInputError, NumericRangeError
from .mc import Estimate, laplace_weights, mean_estimate

SLOPE_GRID = np.geomspace(1e-4, 0.5, 12)
LAPLACE_T_MIN = 1e-4
LAPLACE_NODES = 200


def lift(M0, d):
    """Embed a ``d0 x d0`` matrix as the upper-left block of a ``d x d`` one."""
    M0 = np.atleast_2d(np.asarray(M0, dtype=float))
    d0 = M0.shape[0]
    M = np.zeros((d, d))
    M[:d0, :d0] = M0
    return M


@dataclass(frozen=True, eq=False)
class OUModel:
    A: np.ndarray
    Q0: np.ndarray

    def __post_init__(self):
        A = matcore.as_square(self.A, "A")
        Q0 = matcore.as_psd(np.atleast_2d(self.Q0), "Q0")
        if Q0.shape[0] > A.shape[0]:
            raise InvalidInputError("Q0 is larger than A")
        w = np.linalg.eigvalsh(Q0)
        if w[0] <= 0:
            raise InvalidInputError("Q0 must be positive definite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q0", Q0)
        if self.kalman.k is None:
            raise InvalidInputError("(A, d0) fails the Kalman rank condition")

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def d0(self):
        return self.Q0.shape[0]

    @cached_property
    def Q(self):
        return lift(self.Q0, self.d)

    @cached_property
    def kalman(self):
        return matcore.kalman_index(self.A, self.d0)

    @property
    def k(self):
        return self.kalman.k

    @cached_property
    def eta(self):
        """Largest ``eta`` with ``eta |h|^2 <= <Q0 h, h> <= |h|^2 / eta``."""
        w = np.linalg.eigvalsh(self.Q0)
        return float(min(w[0], 1.0 / w[-1]))

    @cached_property
    def omega(self):
        """Growth rate with ``||e^{tA}|| <= M e^{omega t}``; strictly above
        the spectral abscissa so that Jordan blocks are absorbed in ``M``."""
        return matcore.spectral_abscissa(self.A) + 0.1

    @cached_property
    def M(self):
        ts = np.linspace(0.0, 50.0, 501)
        return float(max(matcore.hs_norm(matcore.mat_exp(self.A, t)) * np.exp(-self.omega * t) for t in ts))

    @cached_property
    def stair(self):
        return matcore.staircase(self.A, self.Q)

    @property
    def p_default(self):
        return p_default(self.k)

    @property
    def lambda_min(self):
        a = matcore.spectral_abscissa(self.A)
        return max(0.0, a, -np.trace(self.A) / self.p_default) + 1.0

    def transition_factor(self, t):
        return matcore.psd_factor(matcore.gramian(self.A, self.Q, t))


def p_default(k):
    """Smallest integer exponent comfortably above the integrability
    threshold ``(2k+1)/2``."""
    return max(2, int(np.ceil((2 * k + 1) / 2)) + 1)


def ou_transition(m, z, t):
    """Mean ``e^{tA} z`` and covariance ``Q_t`` of ``Z_t`` started at ``z``."""
    t = float(t)
    if not t > 0:
        raise InvalidInputError(f"t must be positive, got {t}")
    z = np.asarray(z, dtype=float)
    return matcore.mat_exp(m.A, t) @ z, matcore.gramian(m.A, m.Q, t)


def ou_sample_path(m, z0, times, n, seed, workers=1, record_every=1):
    """Exact-in-law paths on ``times`` via ``Z_{t+h} = e^{hA} Z_t + N(0, Q_h)``."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
        raise InvalidInputError("times must be strictly increasing and start at 0")
    z0 = np.asarray(z0, dtype=float)
    d = m.d
    steps = []
    for h in np.diff(times):
        steps.append((matcore.mat_exp(m.A, h), matcore.psd_factor(matcore.gramian(m.A, m.Q, h))))
    rec_idx = np.arange(0, times.size, record_every)
    if rec_idx[-1] != times.size - 1:
        raise InvalidInputError("record_every must divide the number of steps")

    def block(rng, nb):
        Z = np.broadcast_to(z0, (nb, d)).copy()
        out = np.empty((nb, rec_idx.size, d))
        out[:, 0] = Z
        j = 1
        runmax = np.linalg.norm(Z, axis=1)
        for i, (E, F) in enumerate(steps, start=1):
            xi = rng.standard_normal((nb, d))
            Z = Z @ E.T + xi[:, : F.shape[1]] @ F.T
            np.maximum(runmax, np.linalg.norm(Z, axis=1), out=runmax)
            if j < rec_idx.size and rec_idx[j] == i:
                out[:, j] = Z
                j += 1
        return {"states": out, "max_excursion": runmax}

    res = concat_blocks(streams.map_blocks(block, int(n), seed, workers))
    n = int(n)
    return PathEnsemble(
        times=times[rec_idx],
        states=res["states"],
        exit_time=np.full(n, np.inf),
        stopped=np.zeros(n, bool),
        diverged=np.zeros(n, bool),
        max_excursion=res["max_excursion"],
        seed=int(seed),
        scheme="ou-exact",
        step=float(np.max(np.diff(times))),
        z0=z0,
        params={"record_every": record_every},
    )


def _checked(f, X):
    with np.errstate(all="ignore"):
        v = np.asarray(f(X), dtype=float)
    if not np.all(np.isfinite(v)):
        bad = np.argwhere(~np.isfinite(v))[0]
        raise EvaluationError(f"{getattr(f, 'label', 'f')} is not finite at a sampled point", point=X[tuple(bad)])
    return v


def semigroup_apply(m, f, t, z, n, rng):
    """Monte Carlo ``P_t f(z) = E f(Z_t^z)`` with its standard error."""
    n = int(n)
    if n < 2:
        raise InvalidInputError("n must be at least 2")
    mean, cov = ou_transition(m, z, t)
    X = matcore.gaussian_sample(mean, cov, n, rng)
    return mean_estimate(_checked(f, X))


def semigroup_gradient(m, f, t, z, h, n, rng):
    """Monte Carlo ``<D P_t f(z), h> = P_t(<Df, e^{tA} h>)(z)``."""
    if getattr(f, "grad", None) is None:
        raise CapabilityError("semigroup_gradient needs a field with a gradient")
    n = int(n)
    if n < 2:
        raise InvalidInputError("n must be at least 2")
    mean, cov = ou_transition(m, z, t)
    X = matcore.gaussian_sample(mean, cov, n, rng)
    direction = matcore.mat_exp(m.A, t) @ np.asarray(h, dtype=float)
    return mean_estimate(_checked(f.grad, X) @ direction)


def laplace_grid(lam, t_min=LAPLACE_T_MIN, nodes=LAPLACE_NODES):
    """Time nodes ``0, t_min, ..., T_max`` (geometric after ``t_min``)."""
    t_max = max(10.0, 12.0 / lam)
    return np.concatenate([[0.0], np.geomspace(t_min, t_max, nodes)])


def resolvent_samples(m, f, lam, Z, n, rng, t_min=LAPLACE_T_MIN, nodes=LAPLACE_NODES):
    """Per-sample Laplace quadratures for every start point in ``Z``.

    Returns ``(S, tail)`` with ``S`` of shape ``(n, len(Z))``.  The same
    Gaussian draws are shared by all start points and all time nodes, so
    differences across ``Z`` have low variance.
    """
    lam = float(lam)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n = int(n)
    times = laplace_grid(lam, t_min, nodes)
    w = laplace_weights(times, lam)
    xi = rng.standard_normal((n, m.d))
    acc = np.zeros((n, Z.shape[0]))
    for t, wt in zip(times, w):
        if t == 0.0:
            vals = _checked(f, Z)
            acc += wt * vals[None, :]
            continue
        F = m.transition_factor(t)
        means = Z @ matcore.mat_exp(m.A, t).T
        noise = xi[:, : F.shape[1]] @ F.T
        X = means[None, :, :] + noise[:, None, :]
        acc += wt * _checked(f, X)
    tail = np.exp(-lam * times[-1]) * f.sup_norm / lam
    return acc, float(tail)


def resolvent_apply(m, f, lam, z, n, rng, t_min=LAPLACE_T_MIN, nodes=LAPLACE_NODES):
    """Monte Carlo ``R(lam) f(z) = int_0^inf e^{-lam t} P_t f(z) dt``.

    ``P_t f`` is interpolated linearly in ``t`` on a geometric grid and
    integrated against the exact exponential weight; the tail beyond the
    last node is bounded by ``e^{-lam T} sup|f| / lam`` and returned as
    ``bias_bound``.  ``z`` may be a single point or an array of points.
    """
    lam = float(lam)
    if not lam > m.lambda_min:
        raise InvalidInputError(f"lambda={lam} must exceed lambda_min={m.lambda_min:.6g}")
    if int(n) < 2:
        raise InvalidInputError("n must be at least 2")
    z = np.asarray(z, dtype=float)
    S, tail = resolvent_samples(m, f, lam, np.atleast_2d(z), n, rng, t_min, nodes)
    if z.ndim == 1:
        return mean_estimate(S[:, 0], bias_bound=tail)
    value, stderr = mean_estimate(S)
    return [Estimate(float(v), float(s), tail) for v, s in zip(value, stderr)]


def det_smalltime_fit(m, t_grid=None):
    """Least-squares slope of ``log det Q_t`` against ``log t``.

    Determinants come from the rescaled staircase Gramian, which stays
    accurate where a direct evaluation would underflow relative to the
    largest eigenvalue.  Returns ``(slope, intercept, rms residual)``.
    """
    t_grid = SLOPE_GRID if t_grid is None else np.asarray(t_grid, dtype=float)
    if t_grid.size < 8:
        raise InvalidInputError("slope fit needs at least 8 times")
    log_dets = []
    for t in t_grid:
        ld = matcore.scaled_gramian(m.A, m.Q, t, m.stair).log_det
        if not np.isfinite(ld):
            raise NumericRangeError(f"log det Q_t not finite at t={t}")
        log_dets.append(ld)
    return matcore.loglog_fit(t_grid, np.array(log_dets))


# ---------------------------------------------------------------------------
# L^p estimates used by the analytic probes

LP_PROPOSAL_SIGMA = 3.0


def lp_norm(values_fn, d, p, n, rng, sigma=LP_PROPOSAL_SIGMA):
    """Importance-sampled ``(int |g|^p dz)^{1/p}`` with proposal ``N(0, sigma^2 I)``.

    ``values_fn`` maps an ``(n, d)`` array of points to ``(n,)`` values.
    The standard error is propagated to the ``1/p`` power by the delta
    method.
    """
    X = sigma * rng.standard_normal((int(n), d))
    log_q = -0.5 * np.sum(X * X, axis=1) / sigma**2 - d * np.log(sigma * np.sqrt(2 * np.pi))
    vals = np.abs(np.asarray(values_fn(X), dtype=float)) ** p * np.exp(-log_q)
    est = mean_estimate(vals)
    if est.value <= 0:
        return Estimate(0.0, 0.0)
    norm = est.value ** (1.0 / p)
    return Estimate(norm, norm * est.stderr / (p * est.value))


def semigroup_lp_norm(m, f, t, p, n_outer, n_inner, rng):
    """``||P_t f||_p`` with the inner expectation by common random numbers."""
    xi = rng.standard_normal((int(n_inner), m.d))
    F = m.transition_factor(t)
    E = matcore.mat_exp(m.A, t)
    noise = xi[:, : F.shape[1]] @ F.T

    def values(X):
        pts = (X @ E.T)[:, None, :] + noise[None, :, :]
        return f(pts).mean(axis=1)

    return lp_norm(values, m.d, p, n_outer, rng)


def resolvent_lp_norm(m, f, lam, p, n_outer, n_inner, rng):
    """``||R(lam) f||_p`` with the inner resolvent by common random numbers."""
    inner_seed = int(rng.integers(2**63))

    def values(X):
        S, _ = resolvent_samples(m, f, lam, X, n_inner, np.random.default_rng(inner_seed))
        return S.mean(axis=0)

    return lp_norm(values, m.d, p, n_outer, rng)
