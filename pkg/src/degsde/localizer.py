"""Covering atlases with ellipticity and oscillation certificates, cutoff
models on single charts, and the radial truncation family.

Charts come from an adaptive subdivision of a cube grid: every cube is
wrapped in the ball through its corners, so the balls cover whatever the
cubes tile.  A cube whose probed oscillation is too large is split into
``m^d`` equal subcubes, with ``m`` chosen from the observed excess.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from . import matcore
from .errors import CoverConstructionError, HypothesisViolation, InvalidInputError
from .sdesim import SDEModel

RADIUS_FLOOR = 1e-4
BUILD_MARGIN = 0.9  # build certifies against margin * bound so denser checks pass
MAX_CHARTS = 5_000_000
CHUNK_POINTS = 2_000_000


# --- smooth cutoffs ---------------------------------------------------------------


def smoothstep5(s):
    """``6s^5 - 15s^4 + 10s^3`` on ``[0, 1]``, clamped outside."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


def radial_cutoff(r, inner, outer):
    """1 for ``r <= inner``, 0 for ``r >= outer``, C^2 quintic in between."""
    s = (r - inner) / (outer - inner)
    return np.where(r <= inner, 1.0, np.where(r >= outer, 0.0, 1.0 - smoothstep5(s)))


# --- probes --------------------------------------------------------------------------


def ellipticity(Q):
    """Two-sided ellipticity ``min(lambda_min, 1/lambda_max)`` and
    ``lambda_min`` per matrix in a ``(..., d0, d0)`` stack."""
    if Q.shape[-1] == 1:
        lo = hi = Q[..., 0, 0]
    else:
        w = np.linalg.eigvalsh(Q)
        lo, hi = w[..., 0], w[..., -1]
    with np.errstate(divide="ignore"):
        inv = np.where(hi > 0, 1.0 / hi, -np.inf)
    return np.minimum(lo, inv), lo


def ball_stencil(d, n, seed=0):
    """Deterministic probe offsets in the closed unit ball: the centre,
    axis points, diagonal points and a scrambled Sobol fill up to ``n``."""
    pts = [np.zeros(d)]
    eye = np.eye(d)
    for scale in (1.0, 0.5):
        for i in range(d):
            pts += [scale * eye[i], -scale * eye[i]]
    if d <= 4:
        for signs in np.array(np.meshgrid(*[[-1.0, 1.0]] * d)).reshape(d, -1).T:
            pts.append(signs / math.sqrt(d))
    pts = np.array(pts)
    if len(pts) < n:
        sob = qmc.Sobol(d, scramble=True, seed=seed).random(4 * n) * 2 - 1
        sob = sob[np.linalg.norm(sob, axis=1) <= 1]
        pts = np.vstack([pts, sob[: n - len(pts)]])
    return pts[:max(n, 1)]


def lattice_stencil(d, oversample, radius=2.0):
    """Lattice offsets of spacing ``1/oversample`` inside ``B(0, radius)``."""
    m = int(math.floor(radius * oversample))
    ax = np.arange(-m, m + 1) / oversample
    g = np.array(np.meshgrid(*[ax] * d, indexing="ij")).reshape(d, -1).T
    return g[np.linalg.norm(g, axis=1) <= radius + 1e-12]


def _probe(model, centers, deltas, stencil, scale):
    """Max HS oscillation against the centre value and min ellipticity over
    ``center + scale * delta * stencil`` for every chart.  Returns
    ``(osc, ell, lo, arg_osc_point, arg_ell_point)``."""
    n, d = centers.shape
    P = len(stencil)
    osc = np.empty(n)
    ell = np.empty(n)
    lo = np.empty(n)
    wo = np.empty((n, d))
    we = np.empty((n, d))
    step = max(1, CHUNK_POINTS // P)
    for a in range(0, n, step):
        c = centers[a:a + step]
        r = (scale * deltas[a:a + step])[:, None, None]
        Z = c[:, None, :] + r * stencil[None, :, :]
        Q = model.diffusion_matrix(Z)
        Qc = model.diffusion_matrix(c)
        D = Q - Qc[:, None]
        hs = np.sqrt(np.sum(D * D, axis=(-1, -2)))
        e, l = ellipticity(Q)
        io = np.argmax(hs, axis=1)
        ie = np.argmin(e, axis=1)
        rows = np.arange(len(c))
        osc[a:a + step] = hs[rows, io]
        ell[a:a + step] = e[rows, ie]
        lo[a:a + step] = np.min(l, axis=1)
        wo[a:a + step] = Z[rows, io]
        we[a:a + step] = Z[rows, ie]
    return osc, ell, lo, wo, we


def annulus_index(centers):
    return np.maximum(1, np.ceil(np.linalg.norm(centers, axis=1) - 1e-12)).astype(int)


def _eta_table(model, R, n_samples, seed):
    """Non-increasing per-annulus ellipticity bounds: margin times the
    running minimum of the sampled ellipticity over annuli ``1..k+1``."""
    K = int(math.ceil(R)) + 1
    d = model.d
    sob = qmc.Sobol(d, scramble=True, seed=seed)
    raw = sob.random(1 << max(8, int(math.ceil(math.log2(max(n_samples, 2) * K)))))
    u = raw[:, 0] ** (1.0 / d)
    g = qmc.MultivariateNormalQMC(np.zeros(d), seed=seed).random(len(raw))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    Z = g * (K * u)[:, None]
    Z = np.vstack([np.zeros(d), Z])
    e, _ = ellipticity(model.diffusion_matrix(Z))
    if np.min(e) <= 0:
        raise HypothesisViolation("Q0 is not positive definite", witness=Z[int(np.argmin(e))])
    shell = np.maximum(1, np.ceil(np.linalg.norm(Z, axis=1) - 1e-12)).astype(int)
    per = np.full(K + 1, np.inf)
    for k in range(1, K + 1):
        sel = shell == k
        if np.any(sel):
            per[k] = np.min(e[sel])
    eta = np.empty(K + 1)
    eta[0] = np.inf
    for k in range(1, K + 1):
        eta[k] = min(eta[k - 1], per[min(k + 1, K)], per[k])
    eta[0] = eta[1]
    return BUILD_MARGIN * eta


# --- atlas ------------------------------------------------------------------------


@dataclass(frozen=True)
class Chart:
    center: np.ndarray
    radius: float
    eta: float
    gamma: float
    annulus: int
    verified: bool


@dataclass(frozen=True, eq=False)
class CoverAtlas:
    """Charts ``B(center_j, radius_j)`` covering the closed ball of radius
    ``region_radius``, with per-chart ellipticity ``eta_j`` and oscillation
    bound ``gamma_j`` certified on ``B(center_j, 2 radius_j)``."""

    centers: np.ndarray
    radii: np.ndarray
    eta: np.ndarray
    gamma: np.ndarray
    annulus: np.ndarray
    verified: np.ndarray
    region_radius: float
    lower_eig: np.ndarray = None
    oscillation: np.ndarray = None
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.radii)

    @property
    def d(self):
        return self.centers.shape[1]

    def chart(self, j):
        return Chart(self.centers[j].copy(), float(self.radii[j]), float(self.eta[j]),
                     float(self.gamma[j]), int(self.annulus[j]), bool(self.verified[j]))

    @property
    def charts(self):
        return [self.chart(j) for j in range(len(self))]

    def summary(self):
        per = {}
        for k in np.unique(self.annulus):
            sel = self.annulus == k
            per[int(k)] = {
                "n_charts": int(np.sum(sel)),
                "eta": float(np.min(self.eta[sel])),
                "min_radius": float(np.min(self.radii[sel])),
                "max_radius": float(np.max(self.radii[sel])),
            }
        return {
            "region_radius": self.region_radius,
            "n_charts": len(self),
            "n_verified": int(np.sum(self.verified)),
            "min_radius": float(np.min(self.radii)),
            "max_radius": float(np.max(self.radii)),
            "annuli": per,
            "params": self.params,
        }

    def to_dict(self, include_charts=True):
        out = self.summary()
        if include_charts:
            out["charts"] = [
                {"center": [float(v) for v in self.centers[j]], "radius": float(self.radii[j]),
                 "eta": float(self.eta[j]), "gamma": float(self.gamma[j]),
                 "annulus": int(self.annulus[j]), "verified": bool(self.verified[j])}
                for j in range(len(self))
            ]
        return out

    def with_radius(self, j, radius):
        radii = self.radii.copy()
        radii[j] = radius
        return replace(self, radii=radii)

    def with_gamma(self, gamma):
        return replace(self, gamma=np.broadcast_to(np.asarray(gamma, dtype=float), self.radii.shape).copy())


def _constant_rule(g):
    return lambda eta: np.full(np.shape(eta), float(g))


def _initial_cubes(R, d):
    side = 0.999 / math.sqrt(d)
    n = int(math.ceil(R / side))
    ax = (np.arange(-n, n) + 0.5) * side
    C = np.array(np.meshgrid(*[ax] * d, indexing="ij")).reshape(d, -1).T
    return _keep_intersecting(C, np.full(len(C), side), R)


def _keep_intersecting(C, side, R):
    # distance from origin to the cube
    gap = np.maximum(np.abs(C) - side[:, None] / 2, 0.0)
    keep = np.linalg.norm(gap, axis=1) <= R
    return C[keep], side[keep]


def _split(C, side, m):
    """Split each cube into ``m_i^d`` subcubes."""
    d = C.shape[1]
    outC, outS = [], []
    for mi in np.unique(m):
        sel = m == mi
        offs = (np.arange(mi) + 0.5) / mi - 0.5
        grid = np.array(np.meshgrid(*[offs] * d, indexing="ij")).reshape(d, -1).T
        c = C[sel][:, None, :] + side[sel][:, None, None] * grid[None]
        outC.append(c.reshape(-1, d))
        outS.append(np.repeat(side[sel] / mi, len(grid)))
    return np.vstack(outC), np.concatenate(outS)


def half_diagonal(side, d):
    return side * math.sqrt(d) / 2 * (1 + 1e-9)


def build_cover(model, R, gamma_rule=0.1, probe_density=32, *, seed=0, max_charts=MAX_CHARTS,
                radius_floor=RADIUS_FLOOR):
    """Build an atlas of ``B(0, R)`` for the diffusion matrix of ``model``.

    ``gamma_rule`` maps an ellipticity bound to an oscillation bound; a number
    means a constant rule.  Each chart is certified on ``probe_density``
    probe points of its doubled ball: oscillation below ``BUILD_MARGIN``
    times its bound and ellipticity at least its annulus bound.
    """
    if R <= 0:
        raise InvalidInputError("R must be positive")
    rule = _constant_rule(gamma_rule) if np.isscalar(gamma_rule) else gamma_rule
    d = model.d
    eta_k = _eta_table(model, R, max(64, probe_density * 8), seed)
    if not np.all(rule(eta_k[1:]) > 0):
        raise InvalidInputError("gamma_rule must be positive")
    stencil = ball_stencil(d, probe_density, seed)

    C, side = _initial_cubes(R, d)
    done_C, done_S, done_osc, done_lo = [], [], [], []
    while len(C):
        if sum(map(len, done_S)) + len(C) > max_charts:
            raise CoverConstructionError(f"atlas would exceed {max_charts} charts")
        delta = half_diagonal(side, d)
        k = np.minimum(annulus_index(C), len(eta_k) - 1)
        eta = eta_k[k]
        gam = rule(eta)
        osc, ell, lo, wo, we = _probe(model, C, delta, stencil, 2.0)
        if np.any(lo <= 0):
            j = int(np.argmin(lo))
            raise HypothesisViolation("Q0 is not positive definite", witness=we[j])
        bad_ell = ell < eta
        if np.any(bad_ell):
            # sampled annulus bound was optimistic: lower it and start over
            for kk in np.unique(k[bad_ell]):
                worst = np.min(ell[bad_ell & (k == kk)])
                eta_k[kk:] = np.minimum(eta_k[kk:], BUILD_MARGIN * worst)
            C, side = _initial_cubes(R, d)
            done_C, done_S, done_osc, done_lo = [], [], [], []
            continue
        ok = osc < BUILD_MARGIN * gam
        done_C.append(C[ok])
        done_S.append(side[ok])
        done_osc.append(osc[ok])
        done_lo.append(lo[ok])
        if np.all(ok):
            break
        C, side, osc, gam, wo = C[~ok], side[~ok], osc[~ok], gam[~ok], wo[~ok]
        ratio = osc / (BUILD_MARGIN * gam)
        m = np.maximum(2, np.ceil(1.2 * ratio)).astype(int)
        new_delta = half_diagonal(side / m, d)
        if np.any(new_delta < radius_floor):
            j = int(np.argmin(new_delta))
            raise CoverConstructionError(
                f"chart radius would fall below {radius_floor:g} near {C[j].tolist()} "
                f"(oscillation {osc[j]:.3g} against bound {gam[j]:.3g})",
                witness=wo[j],
            )
        n_new = int(np.sum(m.astype(float) ** d))
        if sum(map(len, done_S)) + n_new > max_charts:
            raise CoverConstructionError(f"atlas would exceed {max_charts} charts", witness=wo[0])
        C, side = _split(C, side, m)
        C, side = _keep_intersecting(C, side, R)

    C = np.vstack(done_C)
    side = np.concatenate(done_S)
    order = np.lexsort(C.T[::-1])
    C, side = C[order], side[order]
    k = np.minimum(annulus_index(C), len(eta_k) - 1)
    return CoverAtlas(
        centers=C,
        radii=half_diagonal(side, d),
        eta=eta_k[k].copy(),
        gamma=np.asarray(rule(eta_k[k]), dtype=float),
        annulus=annulus_index(C),
        verified=np.ones(len(C), dtype=bool),
        region_radius=float(R),
        lower_eig=np.concatenate(done_lo)[order],
        oscillation=np.concatenate(done_osc)[order],
        params={"gamma_rule": gamma_rule if np.isscalar(gamma_rule) else "callable",
                "probe_density": int(probe_density), "seed": int(seed),
                "eta_table": [float(v) for v in eta_k[1:]], "build_margin": BUILD_MARGIN},
    )


# --- verification -----------------------------------------------------------------


@dataclass
class CoverVerdict:
    chart_ok: np.ndarray
    oscillation: np.ndarray
    ellipticity: np.ndarray
    lower_eig: np.ndarray
    failures: list
    coverage_ok: bool
    uncovered: np.ndarray
    n_coverage_samples: int
    oversample_factor: int
    stencil_size: int

    @property
    def ok(self):
        return bool(np.all(self.chart_ok) and self.coverage_ok)

    def to_dict(self):
        return {
            "ok": self.ok,
            "n_charts": int(len(self.chart_ok)),
            "n_failed": int(np.sum(~self.chart_ok)),
            "failures": self.failures,
            "coverage_ok": self.coverage_ok,
            "uncovered_witnesses": self.uncovered[:20].tolist(),
            "n_coverage_samples": self.n_coverage_samples,
            "grid": {"spacing": "radius/oversample", "oversample_factor": self.oversample_factor,
                     "points_per_chart": self.stencil_size},
        }


def _ball_sample(n, d, R, seed):
    m = max(1, int(np.ceil(np.log2(max(n, 1)))))
    sob = qmc.Sobol(d + 1, scramble=True, seed=seed).random_base2(m)[:n]
    g = qmc.MultivariateNormalQMC(np.zeros(d), seed=seed + 1).random(1 << m)[:n]
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (R * sob[:, 0] ** (1.0 / d))[:, None]


def uncovered_points(atlas, Z):
    """Rows of ``Z`` lying in no chart ball."""
    tree = cKDTree(atlas.centers)
    kk = min(16, len(atlas))
    dist, idx = tree.query(Z, k=kk)
    dist = dist.reshape(len(Z), kk)
    idx = idx.reshape(len(Z), kk)
    inside = np.any(dist < atlas.radii[idx], axis=1)
    rmax = float(np.max(atlas.radii))
    for i in np.flatnonzero(~inside):
        cand = tree.query_ball_point(Z[i], rmax)
        if cand and np.any(np.linalg.norm(atlas.centers[cand] - Z[i], axis=1) < atlas.radii[cand]):
            inside[i] = True
    return Z[~inside]


def verify_cover(atlas, model, oversample_factor=2, n_coverage=1 << 15, seed=1, max_witnesses=50):
    """Re-check every chart certificate on a lattice of spacing
    ``radius / oversample_factor`` in the doubled ball, and coverage of
    ``B(0, R)`` on a quasi-random sample.  Failures are returned as data."""
    if oversample_factor < 2:
        raise InvalidInputError("oversample_factor must be at least 2")
    d = atlas.d
    stencil = lattice_stencil(d, int(oversample_factor))
    osc, ell, lo, wo, we = _probe(model, atlas.centers, atlas.radii, stencil, 1.0)
    ok_osc = osc < atlas.gamma
    ok_ell = ell >= atlas.eta
    chart_ok = ok_osc & ok_ell
    failures = []
    for j in np.flatnonzero(~chart_ok)[:max_witnesses]:
        if not ok_osc[j]:
            failures.append({"chart": int(j), "kind": "oscillation", "value": float(osc[j]),
                             "bound": float(atlas.gamma[j]), "witness": wo[j].tolist()})
        if not ok_ell[j]:
            failures.append({"chart": int(j), "kind": "ellipticity", "value": float(ell[j]),
                             "bound": float(atlas.eta[j]), "witness": we[j].tolist()})
    Z = _ball_sample(n_coverage, d, atlas.region_radius, seed)
    Z = np.vstack([Z, np.zeros(d)])
    miss = uncovered_points(atlas, Z)
    return CoverVerdict(chart_ok, osc, ell, lo, failures, len(miss) == 0, miss, len(Z),
                        int(oversample_factor), len(stencil))


# --- cutoff models -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LocalizedModel:
    """Chart-``j`` cutoff of ``base``: diffusion matrix
    ``rho Q0 + (1 - rho) Q0(center)`` and drift ``b0`` restricted to the
    chart ball."""

    base: SDEModel
    j: int
    center: np.ndarray
    radius: float
    eta: float
    gamma: float
    model: SDEModel

    def bump(self, Z):
        r = np.linalg.norm(np.asarray(Z, dtype=float) - self.center, axis=-1)
        return radial_cutoff(r, self.radius, 2 * self.radius)

    def diffusion_matrix(self, Z):
        return self.model.diffusion_matrix(Z)

    def drift0(self, Z):
        return self.model.drift0(Z)


def localize_model(m, atlas, j):
    if not 0 <= j < len(atlas):
        raise InvalidInputError(f"chart index {j} out of range")
    if not atlas.verified[j]:
        raise InvalidInputError(f"chart {j} is not verified")
    c = atlas.centers[j].copy()
    delta = float(atlas.radii[j])
    Qc = m.diffusion_matrix(c)
    d0 = m.d0

    def Q0(Z):
        Z = np.asarray(Z, dtype=float)
        r = np.linalg.norm(Z - c, axis=-1)
        rho = radial_cutoff(r, delta, 2 * delta)[..., None, None]
        Q = m.diffusion_matrix(Z)
        blend = rho * Q + (1.0 - rho) * Qc
        return np.where((r <= delta)[..., None, None], Q, blend)

    def b0(Z):
        Z = np.asarray(Z, dtype=float)
        inside = np.linalg.norm(Z - c, axis=-1) < delta
        return np.where(inside[..., None], m.drift0(Z), 0.0)

    local = SDEModel(
        A=m.A, d0=d0, b0=b0 if m.has_drift else None, Q0=Q0, r=d0,
        name=f"{m.name}[chart {j}]",
        meta={"chart": int(j), "center": c.tolist(), "radius": delta},
    )
    return LocalizedModel(m, int(j), c, delta, float(atlas.eta[j]), float(atlas.gamma[j]), local)


def truncate_model(m, k, n_samples=20000, seed=0):
    """Radial truncation: ``psi Q0 + (1 - psi) I`` and ``psi b0`` with
    ``psi = 1`` on ``|z| <= k`` and ``0`` on ``|z| >= 2k``.

    The ellipticity ``min(eta_k, 1)`` is recorded in ``meta``, with
    ``eta_k`` sampled on the closed ball of radius ``2k``.
    """
    if k < 1:
        raise InvalidInputError("truncation level must be at least 1")
    k = float(k)
    d0 = m.d0
    I0 = np.eye(d0)
    Z = _ball_sample(n_samples, m.d, 2 * k, seed)
    Z = np.vstack([np.zeros(m.d), Z])
    e, lo = ellipticity(m.diffusion_matrix(Z))
    if np.min(lo) <= 0:
        raise HypothesisViolation("Q0 is not positive definite", witness=Z[int(np.argmin(lo))])
    eta_k = float(np.min(e))
    drift_sup = float(np.max(np.linalg.norm(m.drift0(Z), axis=1))) if m.has_drift else 0.0

    def psi(Z):
        return radial_cutoff(np.linalg.norm(Z, axis=-1), k, 2 * k)

    def Q0(Z):
        Z = np.asarray(Z, dtype=float)
        p = psi(Z)
        Q = m.diffusion_matrix(Z)
        out = p[..., None, None] * Q + (1.0 - p[..., None, None]) * I0
        return np.where((p == 1.0)[..., None, None], Q, out)

    def b0(Z):
        Z = np.asarray(Z, dtype=float)
        p = psi(Z)[..., None]
        b = m.drift0(Z)
        return np.where(p == 1.0, b, p * b)

    return SDEModel(
        A=m.A, d0=d0, b0=b0 if m.has_drift else None, Q0=Q0, r=d0,
        phi=m.phi, C=m.C, name=f"{m.name}[trunc {k:g}]",
        meta={"level": k, "ellipticity": min(eta_k, 1.0), "eta_sampled": eta_k,
              "drift_sup_sampled": drift_sup, "base": m.name},
    )
