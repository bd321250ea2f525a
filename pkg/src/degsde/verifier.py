"""Statistical checks on simulated laws.

Everything here works at the level of resolvent functionals
``int_0^T e^{-lam t} E f(X_t) dt`` and martingale statistics of the
generator, evaluated on recorded path ensembles.  Time integrals use the
exact exponential weight against the piecewise-linear interpolant of the
path values; the quadrature error is bounded by comparing with the same
rule on every other grid node.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapabilityError, InvalidInputError
from .fields import BATTERY_VERSION, default_battery
from .mc import Estimate, laplace_weights, mean_estimate, zscore
from .oukernel import lp_norm, resolvent_samples

DEFAULT_LAMBDAS = (2.0, 4.0, 8.0)
Z_CRIT = 4.0
CSV_COLUMNS = ("f_id", "lambda", "valueA", "stderrA", "valueB", "stderrB", "zscore", "verdict")


def _coarse_index(nt):
    """Every other node, keeping the last one."""
    idx = np.arange(0, nt, 2)
    if idx[-1] != nt - 1:
        idx = np.append(idx, nt - 1)
    return idx


def _field_values(f, states):
    n, nt, d = states.shape
    return f.evaluate(states.reshape(-1, d)).reshape(n, nt)


def _laplace_paths(values, times, lam):
    """Per-path Laplace quadrature of ``values`` (shape ``(n, nt)``) and the
    same rule on the coarse grid."""
    fine = values @ laplace_weights(times, lam)
    idx = _coarse_index(len(times))
    coarse = values[:, idx] @ laplace_weights(times[idx], lam)
    return fine, coarse


def _richardson(fine, coarse):
    """Bound for the quadrature error of ``fine``: the mean gap to the
    coarse rule plus two standard errors of that gap."""
    gap = mean_estimate(fine - coarse)
    return abs(gap.value) + 2.0 * (gap.stderr if np.isfinite(gap.stderr) else 0.0)


# --- resolvent functionals ------------------------------------------------------


@dataclass(frozen=True)
class ResolventEstimate:
    value: float
    stderr: float
    lam: float
    z0: tuple
    f_id: str
    scheme_tag: str
    tail_bound: float
    quad_bound: float = 0.0
    n_paths: int = 0
    step: float = float("nan")

    @property
    def estimate(self):
        return Estimate(self.value, self.stderr, self.tail_bound + self.quad_bound)

    def max_principle_ok(self, sup_norm, slack=5.0):
        return abs(self.value) <= sup_norm / self.lam + self.tail_bound + slack * self.stderr

    def to_dict(self):
        return {
            "value": self.value, "stderr": self.stderr, "lambda": self.lam, "z0": list(self.z0),
            "f_id": self.f_id, "scheme_tag": self.scheme_tag, "tail_bound": self.tail_bound,
            "quad_bound": self.quad_bound, "n_paths": self.n_paths, "step": self.step,
        }


def _check_lambda(lam):
    lam = float(lam)
    if not lam > 0:
        raise InvalidInputError(f"lambda must be positive, got {lam}")
    return lam


def _resolvent_from_values(ens, values, f, lam, scheme_tag):
    fine, coarse = _laplace_paths(values, ens.times, lam)
    est = mean_estimate(fine)
    stderr = est.stderr if np.ptp(fine) > 0 else 0.0
    return ResolventEstimate(
        value=est.value,
        stderr=float(stderr),
        lam=lam,
        z0=tuple(float(v) for v in ens.z0),
        f_id=f.label,
        scheme_tag=scheme_tag or ens.scheme,
        tail_bound=float(math.exp(-lam * ens.horizon) * f.sup_norm / lam),
        quad_bound=_richardson(fine, coarse) if np.any(fine != coarse) else 0.0,
        n_paths=ens.n_paths,
        step=float(ens.step),
    )


def resolvent_functional(ens, f, lam, scheme_tag=None):
    """Monte Carlo ``int_0^T e^{-lam t} E f(X_t) dt`` over the ensemble grid.

    The neglected tail ``e^{-lam T} sup|f| / lam`` is reported as
    ``tail_bound``.
    """
    lam = _check_lambda(lam)
    return _resolvent_from_values(ens, _field_values(f, ens.states), f, lam, scheme_tag)


# --- law comparison -----------------------------------------------------------------


@dataclass
class LawComparison:
    pairs: list
    verdict: str
    battery: list
    lambda_grid: list
    z_crit: float = Z_CRIT
    caveats: list = field(default_factory=list)
    battery_version: str = BATTERY_VERSION

    @property
    def passed(self):
        return self.verdict == "pass"

    @property
    def max_abs_z(self):
        return max(abs(p[2]) for p in self.pairs)

    def rows(self):
        for a, b, z in self.pairs:
            yield {
                "f_id": a.f_id, "lambda": a.lam, "valueA": a.value, "stderrA": a.stderr,
                "valueB": b.value, "stderrB": b.stderr, "zscore": z,
                "verdict": "pass" if abs(z) <= self.z_crit else "fail",
            }

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "z_crit": self.z_crit,
            "max_abs_z": self.max_abs_z,
            "battery": self.battery,
            "battery_version": self.battery_version,
            "lambda_grid": self.lambda_grid,
            "caveats": self.caveats,
            "pairs": [
                {"A": a.to_dict(), "B": b.to_dict(), "zscore": z} for a, b, z in self.pairs
            ],
        }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows():
            w.writerow([row[c] if isinstance(row[c], str) else repr(float(row[c])) for c in CSV_COLUMNS])
        return buf.getvalue()


def default_battery_for(ens, scale=1.0):
    return default_battery(ens.d, origin=ens.z0, scale=scale)


def compare_laws(ensA, ensB, battery=None, lambda_grid=DEFAULT_LAMBDAS, z_crit=Z_CRIT):
    """Paired z-scores of resolvent functionals for every battery member and
    every ``lambda``; the verdict passes iff all ``|z| <= z_crit``."""
    if ensA.d != ensB.d or not np.array_equal(ensA.z0, ensB.z0):
        raise InvalidInputError("ensembles must share the starting point")
    if not math.isclose(ensA.horizon, ensB.horizon, rel_tol=1e-12):
        raise InvalidInputError("ensembles must share the horizon")
    if ensA.seed == ensB.seed and ensA.scheme == ensB.scheme and ensA.step == ensB.step:
        raise InvalidInputError("ensembles must use independent seeds")
    battery = default_battery_for(ensA) if battery is None else list(battery)
    lambdas = [_check_lambda(l) for l in lambda_grid]
    caveats = []
    if ensA.step != ensB.step:
        caveats.append(
            f"step sizes differ ({ensA.step:g} vs {ensB.step:g}): a systematic discretisation "
            "bias is not separated from statistical error"
        )
    if ensA.scheme != ensB.scheme:
        caveats.append(f"schemes differ ({ensA.scheme} vs {ensB.scheme}): each carries its own O(h) bias")
    for tag, e in (("A", ensA), ("B", ensB)):
        if e.diverged_fraction > 0:
            caveats.append(f"ensemble {tag}: {e.diverged_fraction:.3g} of paths diverged and were frozen")
    pairs = []
    for f in battery:
        vA = _field_values(f, ensA.states)
        vB = _field_values(f, ensB.states)
        for lam in lambdas:
            a = _resolvent_from_values(ensA, vA, f, lam, None)
            b = _resolvent_from_values(ensB, vB, f, lam, None)
            pairs.append((a, b, zscore(a.estimate, b.estimate)))
    verdict = "pass" if all(abs(z) <= z_crit for _, _, z in pairs) else "fail"
    return LawComparison(pairs, verdict, [f.label for f in battery], lambdas, float(z_crit), caveats)


# --- generator statistics ---------------------------------------------------------


def _require_hessian(f):
    if f.hess is None or f.grad is None:
        raise CapabilityError(f"{f.label} needs gradient and Hessian evaluators")


def _generator_values(m, f, states):
    n, nt, d = states.shape
    return m.generator(f, states.reshape(-1, d)).reshape(n, nt)


def _trapezoid(values, times):
    dt = np.diff(times)
    return 0.5 * (values[:, :-1] + values[:, 1:]) @ dt


def martingale_defect(ens, f, m, t_pairs, h_marks=()):
    """``E[(f(X_t1) - f(X_t0) - int_t0^t1 Lf(X_s) ds) prod_k h_k(X_{s_k})]``
    for each ``(t0, t1)`` in ``t_pairs``.

    ``h_marks`` is a sequence of ``(s_k, field)`` with ``s_k <= t0``.  The
    integral is a trapezoid rule on the recorded grid; its error is bounded
    against the same rule on every other node and returned as
    ``bias_bound``.
    """
    _require_hessian(f)
    out = []
    F = None
    LF = None
    for t0, t1 in t_pairs:
        i0, i1 = ens.time_index(t0), ens.time_index(t1)
        if i1 <= i0:
            raise InvalidInputError("each pair needs t0 < t1")
        weight = np.ones(ens.n_paths)
        for s, h in h_marks:
            if s > t0 + 1e-12:
                raise InvalidInputError("marks must be at or before the window start")
            weight = weight * h.evaluate(ens.states[:, ens.time_index(s), :])
        if F is None:
            F = _field_values(f, ens.states)
            LF = _generator_values(m, f, ens.states)
        seg = LF[:, i0:i1 + 1]
        ts = ens.times[i0:i1 + 1]
        integral = _trapezoid(seg, ts)
        stat = (F[:, i1] - F[:, i0] - integral) * weight
        if len(ts) >= 3:
            idx = _coarse_index(len(ts))
            coarse = (F[:, i1] - F[:, i0] - _trapezoid(seg[:, idx], ts[idx])) * weight
            bound = _richardson(stat, coarse)
        else:
            bound = 0.0
        est = mean_estimate(stat, bias_bound=bound)
        if np.ptp(stat) == 0:
            est = Estimate(est.value, 0.0, bound)
        out.append(est)
    return out


@dataclass(frozen=True)
class IdentityResidual:
    residual: float
    stderr: float
    tail_bound: float
    quad_bound: float
    truncation: float
    hess_resolvent: float
    lam: float
    f_id: str

    def within(self, z=4.0, extra=0.0):
        return abs(self.residual) <= z * self.stderr + self.tail_bound + self.quad_bound + extra

    def to_dict(self):
        return dict(self.__dict__)


def resolvent_identity_check(ens, f, m, lam):
    """Residual ``lam G f - f(z0) - G(L f)`` with ``G`` the truncated
    resolvent functional of the ensemble.

    For an exact law the residual equals ``-e^{-lam T} E f(X_T)``; that
    term is reported as ``truncation`` and bounded by ``tail_bound``.
    ``hess_resolvent`` is ``G`` applied to the Frobenius norm of the
    Hessian block in the noisy coordinates, for perturbation budgets.
    """
    _require_hessian(f)
    lam = _check_lambda(lam)
    F = _field_values(f, ens.states)
    LF = _generator_values(m, f, ens.states)
    f0 = float(f.evaluate(ens.z0[None, :])[0])
    Gf, Gf_c = _laplace_paths(F, ens.times, lam)
    GL, GL_c = _laplace_paths(LF, ens.times, lam)
    res = lam * Gf - f0 - GL
    res_c = lam * Gf_c - f0 - GL_c
    est = mean_estimate(res)
    stderr = est.stderr if np.ptp(res) > 0 else 0.0
    quad = _richardson(res, res_c) if np.any(res != res_c) else 0.0
    decay = math.exp(-lam * ens.horizon)
    d0 = m.d0
    n, nt, d = ens.states.shape
    H = f.hessian(ens.states.reshape(-1, d))[:, :d0, :d0]
    hn = np.sqrt(np.sum(H * H, axis=(-1, -2))).reshape(n, nt)
    return IdentityResidual(
        residual=est.value,
        stderr=float(stderr),
        tail_bound=float(decay * f.sup_norm),
        quad_bound=float(quad),
        truncation=float(-decay * np.mean(F[:, -1])),
        hess_resolvent=float(np.mean(hn @ laplace_weights(ens.times, lam))),
        lam=lam,
        f_id=f.label,
    )


# --- analytic-estimate probes -----------------------------------------------------------


def tensor_grid(lo, hi, n_per_axis):
    """Tensor grid on the box ``[lo, hi]`` with cell volume."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    axes = [np.linspace(a, b, n_per_axis) for a, b in zip(lo, hi)]
    pts = np.array(np.meshgrid(*axes, indexing="ij")).reshape(len(lo), -1).T
    vol = float(np.prod((hi - lo) / max(n_per_axis - 1, 1)))
    return pts, vol


def integrability_threshold(k):
    return (2 * k + 1) / 2.0


@dataclass(frozen=True)
class SupLpProbe:
    sup: Estimate
    argmax: list
    lp: Estimate
    ratio: float | None
    ratio_stderr: float | None
    p: float
    lam: float
    threshold: float
    n_grid: int
    mc_budget: int

    def to_dict(self):
        return {
            "sup": self.sup._asdict(), "argmax": self.argmax, "lp_norm": self.lp._asdict(),
            "ratio": "undefined" if self.ratio is None else self.ratio,
            "ratio_stderr": self.ratio_stderr, "p": self.p, "lambda": self.lam,
            "threshold": self.threshold, "n_grid": self.n_grid, "mc_budget": self.mc_budget,
        }


def _ratio(num, den):
    if den.value == 0:
        return None, None
    r = num.value / den.value
    rel = math.hypot(num.stderr / num.value if num.value else 0.0, den.stderr / den.value)
    return r, abs(r) * rel


def _probe_checks(m, lam, p):
    thr = integrability_threshold(m.k)
    if not p > thr:
        raise InvalidInputError(f"p={p} must exceed (2k+1)/2 = {thr:g} for Kalman index k={m.k}")
    if not lam > m.lambda_min:
        raise InvalidInputError(f"lambda={lam} must exceed lambda_min={m.lambda_min:.6g}")
    return thr


def probe_sup_lp(m, f, lam, p, z_grid, mc_budget, seed=0):
    """Empirical constant in ``sup_z |R(lam) f(z)| <= C ||f||_p``.

    The supremum is taken over ``z_grid`` with common random numbers across
    grid points; ``||f||_p`` is an importance-sampled Monte Carlo estimate.
    """
    lam = float(lam)
    thr = _probe_checks(m, lam, p)
    rng = np.random.default_rng(seed)
    Zg = np.atleast_2d(np.asarray(z_grid, dtype=float))
    S, tail = resolvent_samples(m, f, lam, Zg, int(mc_budget), rng)
    value, stderr = mean_estimate(S)
    i = int(np.argmax(np.abs(value)))
    sup = Estimate(float(abs(value[i])), float(stderr[i]), tail)
    lp = lp_norm(f, m.d, p, int(mc_budget), rng)
    ratio, rse = _ratio(sup, lp)
    if sup.value == 0:
        ratio = rse = None
    return SupLpProbe(sup, Zg[i].tolist(), lp, ratio, rse, float(p), lam, thr, len(Zg), int(mc_budget))


@dataclass(frozen=True)
class SecondDerivativeProbe:
    lp_hessian: Estimate | None
    lp_f: Estimate
    ratio: float | None
    ratio_stderr: float | None
    inconclusive: bool
    hessians: np.ndarray
    hessian_stderr: np.ndarray
    lam: float
    p: float
    fd_step: float

    def to_dict(self):
        return {
            "lp_hessian": None if self.lp_hessian is None else self.lp_hessian._asdict(),
            "lp_f": self.lp_f._asdict(),
            "ratio": "inconclusive" if self.inconclusive else ("undefined" if self.ratio is None else self.ratio),
            "ratio_stderr": self.ratio_stderr,
            "inconclusive": self.inconclusive,
            "lambda": self.lam, "p": self.p, "fd_step": self.fd_step,
        }


def probe_second_derivative(m, f, lam, p, z_grid, fd_step=0.05, mc_budget=4000, seed=0,
                            cell_volume=1.0, noise_limit=0.5):
    """Empirical constant in ``||D_x^2 R(lam) f||_p <= C ||f||_p``.

    Second differences in the first ``d0`` coordinates share one set of
    random numbers across the whole stencil and grid.  The ``L^p`` norm of
    the Hessian is a Riemann sum over ``z_grid`` with ``cell_volume``.  If
    its standard error exceeds ``noise_limit`` times its value, or every
    Hessian is at rounding level, the probe is marked inconclusive and no
    ratio is reported.
    """
    lam = float(lam)
    _probe_checks(m, lam, p)
    if not 1e-3 <= fd_step <= 1e-1:
        raise InvalidInputError("fd_step must lie in [1e-3, 1e-1]")
    Zg = np.atleast_2d(np.asarray(z_grid, dtype=float))
    N, d = Zg.shape
    d0 = m.d0
    h = float(fd_step)
    E = np.eye(d)[:d0] * h
    offsets = [np.zeros(d)]
    for i in range(d0):
        offsets += [E[i], -E[i]]
        for j in range(i):
            offsets += [E[i] + E[j], E[i] - E[j], -E[i] + E[j], -E[i] - E[j]]
    offsets = np.array(offsets)
    pts = (Zg[:, None, :] + offsets[None]).reshape(-1, d)
    rng = np.random.default_rng(seed)
    S, _ = resolvent_samples(m, f, lam, pts, int(mc_budget), rng)
    S = S.reshape(len(S), N, len(offsets))

    H = np.empty((len(S), N, d0, d0))
    pos = 1
    for i in range(d0):
        H[:, :, i, i] = (S[:, :, pos] - 2 * S[:, :, 0] + S[:, :, pos + 1]) / h**2
        pos += 2
        for j in range(i):
            v = (S[:, :, pos] - S[:, :, pos + 1] - S[:, :, pos + 2] + S[:, :, pos + 3]) / (4 * h**2)
            H[:, :, i, j] = H[:, :, j, i] = v
            pos += 4
    Hm, Hs = mean_estimate(H)
    # second differences below this level are cancellation noise
    rounding = 64 * np.finfo(float).eps * float(np.max(np.abs(S.mean(axis=0)))) / h**2
    norm = np.sqrt(np.sum(Hm * Hm, axis=(-1, -2)))
    safe = np.where(norm > 0, norm, 1.0)
    norm_se = np.sqrt(np.sum((Hm / safe[:, None, None]) ** 2 * Hs**2, axis=(-1, -2)))

    A = float(np.sum(norm**p) * cell_volume) ** (1.0 / p)
    if A > 0:
        dA = A ** (1 - p) * norm ** (p - 1) * cell_volume
        A_se = float(np.sqrt(np.sum((dA * norm_se) ** 2)))
    else:
        A_se = float(np.sqrt(np.sum(norm_se**2) * cell_volume))
    lp_f = lp_norm(f, m.d, p, int(mc_budget), rng)
    inconclusive = A_se > noise_limit * A or float(np.max(norm)) <= rounding
    if inconclusive:
        return SecondDerivativeProbe(None, lp_f, None, None, True, Hm, Hs, lam, float(p), h)
    lpH = Estimate(A, A_se)
    ratio, rse = _ratio(lpH, lp_f)
    return SecondDerivativeProbe(lpH, lp_f, ratio, rse, False, Hm, Hs, lam, float(p), h)
