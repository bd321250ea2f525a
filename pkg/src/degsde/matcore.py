"""Dense linear-algebra kernels: matrix exponentials, controllability
Gramians, the Kalman index and degenerate Gaussian sampling.

Everything here is a pure function of its arguments.  Randomness only
enters through an explicit :class:`numpy.random.Generator`.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NotPSDError, NumericRangeError

RANK_TOL = 1e-12
NEG_EIG_TOL = 1e-10
SYM_TOL = 1e-12
MIN_FIT_TIME = 1e-8


def as_square(A, name="A"):
    A = np.array(A, dtype=float, copy=True)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a non-empty square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return A


def as_psd(S, name="S"):
    """Validate symmetry of ``S`` and return a symmetrized float copy.

    Positive semidefiniteness itself is checked where eigenvalues are
    computed anyway (:func:`psd_factor`)."""
    S = as_square(S, name)
    scale = np.max(np.abs(S)) if S.size else 0.0
    if np.max(np.abs(S - S.T)) > SYM_TOL * max(scale, 1e-300):
        raise NotPSDError(f"{name} is not symmetric")
    return 0.5 * (S + S.T)


def hs_norm(M):
    """Hilbert-Schmidt (Frobenius) norm over the last two axes."""
    M = np.asarray(M, dtype=float)
    return np.sqrt(np.sum(M * M, axis=(-2, -1)))


def spectral_abscissa(A):
    return float(np.max(np.linalg.eigvals(as_square(A)).real))


def mat_exp(A, t=1.0):
    """Return ``exp(t A)``.

    Uses scaling and squaring with a degree-13 Pade approximant
    (:func:`scipy.linalg.expm`)."""
    A = as_square(A)
    t = float(t)
    if not np.isfinite(t):
        raise InvalidInputError("t must be finite")
    return scipy.linalg.expm(t * A)


def integrated_exp(A, h):
    """Return ``int_0^h exp(sA) ds`` via the exponential of the block
    matrix ``[[A, I], [0, 0]] h``."""
    A = as_square(A)
    d = A.shape[0]
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = A
    M[:d, d:] = np.eye(d)
    return scipy.linalg.expm(float(h) * M)[:d, d:]


# ---------------------------------------------------------------------------
# Kalman condition


@dataclass(frozen=True)
class KalmanReport:
    """``k`` is ``None`` when the Kalman condition never holds."""

    k: int | None
    rank_sequence: tuple

    @property
    def hypoelliptic(self):
        return self.k is not None

    def to_dict(self):
        return {
            "k": self.k if self.k is not None else "NotHypoelliptic",
            "rank_sequence": list(self.rank_sequence),
        }


def numerical_rank(M, tol=RANK_TOL):
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def _normalize_columns(M):
    norms = np.linalg.norm(M, axis=0)
    norms[norms == 0] = 1.0
    return M / norms


def kalman_index(A, d0):
    """Smallest ``j`` such that ``e_1..e_d0, A e_1.., ..., A^j e_1..`` span R^d.

    Ranks are taken with a relative singular-value threshold; blocks are
    column-normalised first so that powers of ``A`` with large entries do
    not swamp the earlier ones.
    """
    A = as_square(A)
    d = A.shape[0]
    d0 = int(d0)
    if not 1 <= d0 <= d:
        raise InvalidInputError(f"d0 must satisfy 1 <= d0 <= d={d}, got {d0}")
    block = np.eye(d)[:, :d0]
    blocks = []
    ranks = []
    for _ in range(d):
        blocks.append(_normalize_columns(block))
        ranks.append(numerical_rank(np.hstack(blocks)))
        block = A @ block
    # ranks of a growing span cannot shrink; guard against tolerance jitter
    ranks = list(np.maximum.accumulate(ranks))
    k = next((j for j, r in enumerate(ranks) if r == d), None)
    return KalmanReport(k=k, rank_sequence=tuple(int(r) for r in ranks))


# ---------------------------------------------------------------------------
# Gramians


def gramian(A, Q, t):
    """Controllability Gramian ``Q_t = int_0^t e^{sA} Q e^{sA^T} ds``.

    Van Loan: exponentiate ``[[-A, Q], [0, A^T]] t``; with ``F`` the result,
    ``Q_t = F_22^T F_12``.
    """
    A = as_square(A)
    Q = as_psd(Q, "Q")
    if Q.shape != A.shape:
        raise InvalidInputError("A and Q must have the same shape")
    t = float(t)
    if not t > 0:
        raise InvalidInputError(f"t must be positive, got {t}")
    return _van_loan(A, Q, t)


def _van_loan(A, Q, t):
    d = A.shape[0]
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = -A
    M[:d, d:] = Q
    M[d:, d:] = A.T
    F = scipy.linalg.expm(t * M)
    G = F[d:, d:].T @ F[:d, d:]
    return 0.5 * (G + G.T)


@dataclass(frozen=True)
class Staircase:
    """Orthonormal controllability staircase of ``(A, Q)``.

    ``basis`` has orthonormal columns ordered by ``layers`` (layer ``j``
    holds the directions first reached by ``A^j range(Q)``).  ``A_s`` and
    ``Q_s`` are ``A`` and ``Q`` in that basis with the structurally-zero
    entries set exactly to zero.
    """

    basis: np.ndarray
    layers: np.ndarray
    A_s: np.ndarray
    Q_s: np.ndarray

    @property
    def complete(self):
        return self.basis.shape[1] == self.basis.shape[0]

    @property
    def det_exponent(self):
        """Exponent ``e`` in ``det Q_t ~ c t^e`` as ``t -> 0``."""
        return int(len(self.layers) + 2 * np.sum(self.layers))


def staircase(A, Q, tol=RANK_TOL):
    A = as_square(A)
    Q = as_psd(Q, "Q")
    d = A.shape[0]
    w, V = np.linalg.eigh(Q)
    if w[-1] <= 0:
        raise InvalidInputError("Q has no positive direction")
    V0 = V[:, w > tol * w[-1]][:, ::-1]
    parts = [V0]
    layers = [np.zeros(V0.shape[1], dtype=int)]
    scale = max(np.linalg.norm(A, 2), 1e-300)
    U = V0
    j = 0
    while U.shape[1] < d:
        j += 1
        W = A @ parts[-1]
        for _ in range(2):
            W = W - U @ (U.T @ W)
        if W.size == 0:
            break
        Uw, s, _ = np.linalg.svd(W, full_matrices=False)
        keep = s > tol * scale
        if not np.any(keep):
            break
        new = Uw[:, keep]
        new = new - U @ (U.T @ new)
        new, _ = np.linalg.qr(new)
        parts.append(new)
        layers.append(np.full(new.shape[1], j, dtype=int))
        U = np.hstack(parts)
    layers = np.concatenate(layers)
    A_s = U.T @ A @ U
    A_s[layers[:, None] > layers[None, :] + 1] = 0.0
    Q_s = U.T @ Q @ U
    Q_s[(layers[:, None] > 0) | (layers[None, :] > 0)] = 0.0
    Q_s = 0.5 * (Q_s + Q_s.T)
    return Staircase(basis=U, layers=layers, A_s=A_s, Q_s=Q_s)


@dataclass(frozen=True)
class ScaledGramian:
    """``Q_t = U diag(t^a) (t core) diag(t^a) U^T`` with ``core`` of order one.

    Keeps the Gramian accurate at times where its smallest eigenvalues sit
    far below machine precision relative to its largest one.
    """

    t: float
    stair: Staircase
    core: np.ndarray

    @property
    def log_det(self):
        sign, logdet_core = np.linalg.slogdet(self.core)
        if sign <= 0:
            raise NumericRangeError(f"scaled Gramian core not positive definite at t={self.t}")
        return float(self.stair.det_exponent * np.log(self.t) + logdet_core)

    def _scales(self):
        return self.t ** self.stair.layers.astype(float)

    def inverse_norm(self):
        """Spectral norm of ``Q_t^{-1}``."""
        D_inv = 1.0 / self._scales()
        Ci = np.linalg.inv(self.core)
        M = D_inv[:, None] * Ci * D_inv[None, :] / self.t
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])

    def min_eig(self):
        return 1.0 / self.inverse_norm()

    def matrix(self):
        D = self._scales()
        G = self.t * D[:, None] * self.core * D[None, :]
        U = self.stair.basis
        M = U @ G @ U.T
        return 0.5 * (M + M.T)


def scaled_gramian(A, Q, t, stair=None):
    """Gramian at ``t`` in the rescaled staircase coordinates.

    With ``D = diag(t^a)`` the matrix ``M = t D^{-1} A_s D`` has bounded
    entries as ``t -> 0``, and ``D^{-1} Q_t D^{-1} = t * int_0^1 e^{uM} Q_s
    e^{uM^T} du`` is a unit-time Gramian of well-scaled data.
    """
    t = float(t)
    if not t > 0:
        raise InvalidInputError(f"t must be positive, got {t}")
    if stair is None:
        stair = staircase(A, Q)
    if not stair.complete:
        raise NumericRangeError("Gramian is singular: (A, Q) is not controllable")
    a = stair.layers.astype(float)
    expo = 1.0 + a[None, :] - a[:, None]
    M = np.where(stair.A_s != 0.0, stair.A_s * t ** np.where(expo >= 0, expo, 0.0), 0.0)
    core = _van_loan(M, stair.Q_s, 1.0)
    return ScaledGramian(t=t, stair=stair, core=core)


@dataclass(frozen=True)
class GramianReport:
    times: np.ndarray
    gramians: tuple
    log_dets: np.ndarray
    min_eigs: np.ndarray
    fitted_slope: float
    fitted_intercept: float

    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "gramians": [g.tolist() for g in self.gramians],
            "log_dets": self.log_dets.tolist(),
            "min_eigs": self.min_eigs.tolist(),
            "fitted_slope": self.fitted_slope,
            "fitted_intercept": self.fitted_intercept,
        }


def loglog_fit(times, log_values):
    """Least-squares line through ``(log t, log_values)``; returns
    ``(slope, intercept, rms residual)``.  Times below 1e-8 are rejected."""
    times = np.asarray(times, dtype=float)
    log_values = np.asarray(log_values, dtype=float)
    if np.any(times < MIN_FIT_TIME):
        raise InvalidInputError(f"times below {MIN_FIT_TIME} are not allowed in slope fits")
    x = np.log(times)
    X = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(X, log_values, rcond=None)
    resid = log_values - X @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid**2)))


def gramian_report(A, Q, times):
    A = as_square(A)
    Q = as_psd(Q, "Q")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0) or times[0] <= 0:
        raise InvalidInputError("times must be an increasing grid of positive values")
    stair = staircase(A, Q)
    mats, log_dets, min_eigs = [], [], []
    for t in times:
        mats.append(gramian(A, Q, t))
        if stair.complete:
            sg = scaled_gramian(A, Q, t, stair)
            log_dets.append(sg.log_det)
            min_eigs.append(sg.min_eig())
        else:
            log_dets.append(-np.inf)
            min_eigs.append(0.0)
    log_dets = np.array(log_dets)
    if stair.complete:
        slope, intercept, _ = loglog_fit(times, log_dets)
    else:
        slope = intercept = float("nan")
    return GramianReport(
        times=times,
        gramians=tuple(mats),
        log_dets=log_dets,
        min_eigs=np.array(min_eigs),
        fitted_slope=slope,
        fitted_intercept=intercept,
    )


# ---------------------------------------------------------------------------
# Degenerate Gaussians


def psd_factor(S, tol=RANK_TOL):
    """Return ``F`` with ``F F^T = S`` and one column per eigenvalue above
    ``tol * lambda_max``.  Small negative eigenvalues (round-off) are
    clamped to zero."""
    S = as_psd(S)
    w, V = np.linalg.eigh(S)
    lam_max = max(w[-1], 0.0)
    if w[0] < -NEG_EIG_TOL * lam_max or (lam_max == 0.0 and w[0] < 0.0):
        raise NotPSDError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    if lam_max == 0.0:
        return np.zeros((S.shape[0], 0))
    keep = w > tol * lam_max
    w, V = w[keep][::-1], V[:, keep][:, ::-1]
    return V * np.sqrt(w)


def gaussian_sample(mean, cov, n, rng, factor=None):
    """Draw ``n`` samples of ``N(mean, cov)`` as ``mean + F xi`` with ``xi``
    standard normal of dimension ``rank(cov)``."""
    mean = np.asarray(mean, dtype=float)
    n = int(n)
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    F = psd_factor(cov) if factor is None else np.asarray(factor, dtype=float)
    if F.shape[0] != mean.shape[-1]:
        raise InvalidInputError("mean and covariance dimensions differ")
    xi = rng.standard_normal((n, F.shape[1]))
    return mean + xi @ F.T
