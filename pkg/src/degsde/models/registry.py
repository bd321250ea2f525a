"""Built-in models, JSON model descriptions and hypothesis checks."""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .. import matcore, streams
from ..errors import DegSDEError, EvaluationError, InvalidInputError
from ..fields import ScalarField, lyapunov_quadratic
from ..sdesim import SDEModel, constant_model
from .expr import parse_coeff_expr

DEFAULT_A_EXPR = "sqrt(2 + tanh(x))"
PAPER_EX1_C_DECLARED = 12.0


class UnknownModelError(DegSDEError, LookupError):
    pass


# --- expression-backed coefficients -----------------------------------------------


def _default_vars(d):
    if d <= 3:
        return ["x", "y", "z"][:d]
    return [f"z{i + 1}" for i in range(d)]


def _vector_fn(exprs, n_out):
    def fn(Z):
        Z = np.asarray(Z, dtype=float)
        out = np.empty(Z.shape[:-1] + (n_out,))
        for i, e in enumerate(exprs):
            out[..., i] = e(Z)
        return out

    return fn


def _matrix_fn(exprs, rows, cols):
    def fn(Z):
        Z = np.asarray(Z, dtype=float)
        out = np.empty(Z.shape[:-1] + (rows, cols))
        for i in range(rows):
            for j in range(cols):
                out[..., i, j] = exprs[i][j](Z)
        return out

    return fn


def expr_field(expr, d, label="phi", step=1e-4):
    """ScalarField from a parsed expression, with central finite-difference
    gradient and Hessian."""

    def func(Z):
        return np.asarray(expr(Z), dtype=float)

    def grad(Z):
        Z = np.asarray(Z, dtype=float)
        out = np.empty(Z.shape)
        for i in range(d):
            e = np.zeros(d)
            e[i] = step
            out[..., i] = (func(Z + e) - func(Z - e)) / (2 * step)
        return out

    def hess(Z):
        Z = np.asarray(Z, dtype=float)
        out = np.empty(Z.shape + (d,))
        f0 = func(Z)
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = step
            out[..., i, i] = (func(Z + ei) - 2 * f0 + func(Z - ei)) / step**2
            for j in range(i):
                ej = np.zeros(d)
                ej[j] = step
                v = (func(Z + ei + ej) - func(Z + ei - ej) - func(Z - ei + ej) + func(Z - ei - ej)) / (
                    4 * step**2
                )
                out[..., i, j] = v
                out[..., j, i] = v
        return out

    return ScalarField(func, grad, hess, label=label)


def _matrix_of(spec, key, rows):
    raw = spec[key]
    if not isinstance(raw, list) or len(raw) != rows or not all(isinstance(r, list) for r in raw):
        raise InvalidInputError(f"{key} must be a list of {rows} rows")
    return raw


def model_from_json(spec, name=None):
    """Build an :class:`SDEModel` from the JSON model description.

    Keys: ``d``, ``d0``, ``r``, ``A``, ``b0`` (one expression per
    component), ``B0`` (``d0 x r`` expressions), optional ``phi``, ``C`` and
    ``vars``.  ``Q0`` (``d0 x d0`` expressions) may replace ``B0``.
    """
    if not isinstance(spec, dict):
        raise InvalidInputError("model description must be a JSON object")
    try:
        d = int(spec["d"])
        d0 = int(spec["d0"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"model needs integer d and d0: {exc}") from None
    if not 1 <= d0 <= d:
        raise InvalidInputError(f"need 1 <= d0 <= d, got d0={d0}, d={d}")
    A = np.asarray(spec.get("A"), dtype=float)
    if A.shape != (d, d):
        raise InvalidInputError(f"A must be {d}x{d}, got shape {A.shape}")
    variables = list(spec.get("vars") or _default_vars(d))
    if len(variables) != d:
        raise InvalidInputError(f"vars must list {d} names")

    def parse(s):
        return parse_coeff_expr(str(s), variables)

    b0 = None
    if spec.get("b0") is not None:
        raw = spec["b0"]
        if not isinstance(raw, list) or len(raw) != d0:
            raise InvalidInputError(f"b0 must list {d0} expressions")
        exprs = [parse(s) for s in raw]
        if not all(e.is_zero for e in exprs):
            b0 = _vector_fn(exprs, d0)

    B0 = Q0 = None
    r = None
    if spec.get("B0") is not None:
        rows = _matrix_of(spec, "B0", d0)
        r = int(spec.get("r", len(rows[0])))
        if any(len(row) != r for row in rows):
            raise InvalidInputError(f"B0 must be {d0}x{r}")
        B0 = _matrix_fn([[parse(s) for s in row] for row in rows], d0, r)
    elif spec.get("Q0") is not None:
        rows = _matrix_of(spec, "Q0", d0)
        if any(len(row) != d0 for row in rows):
            raise InvalidInputError(f"Q0 must be {d0}x{d0}")
        Q0 = _matrix_fn([[parse(s) for s in row] for row in rows], d0, d0)
        r = d0
    else:
        raise InvalidInputError("model needs B0 (or Q0)")

    phi = None
    if spec.get("phi") is not None:
        phi = expr_field(parse(spec["phi"]), d, label="phi")
    C = spec.get("C")
    return SDEModel(
        A=A, d0=d0, b0=b0, B0=B0, Q0=Q0, r=r, phi=phi,
        C=None if C is None else float(C),
        name=name or spec.get("name", "user"),
        meta={"spec": spec, "vars": variables},
    )


# --- built-ins ------------------------------------------------------------------------


PAPER_EX1_A = [[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]


def paper_ex1_spec(a_expr=DEFAULT_A_EXPR):
    return {
        "name": "paper-ex1",
        "d": 3,
        "d0": 1,
        "r": 1,
        "A": PAPER_EX1_A,
        "b0": ["-x^3 + sgn(y)"],
        "B0": [[a_expr]],
        "phi": "x^2 + y^2 + z^2 + 1",
        "C": PAPER_EX1_C_DECLARED,
        "vars": ["x", "y", "z"],
    }


def sample_ball(n, d, R, rng, include_center=True):
    """``n`` points uniform in the closed ball ``B(0, R)``; the first is the
    origin when ``include_center``."""
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = R * rng.random(n) ** (1.0 / d)
    pts = g * rad[:, None]
    if include_center and n:
        pts[0] = 0.0
    return pts


def lyapunov_ratio(model, phi, Z):
    """``(L phi)/phi`` at the rows of ``Z``."""
    return model.generator(phi, Z) / phi.evaluate(Z)


def empirical_lyapunov_constant(model, phi, R=3.0, n=20000, seed=0):
    """Sampled maximum of ``(L phi)/phi`` over ``B(0, R)``."""
    Z = sample_ball(n, model.d, R, streams.generator(seed, 7))
    return float(np.max(lyapunov_ratio(model, phi, Z)))


def builtin(name, **params):
    """Return a built-in model.

    ``paper-ex1`` accepts ``a`` (expression for the diffusion coefficient);
    ``ou-constant`` accepts ``d``, ``d0``, ``A`` and ``Q0``.
    """
    if name == "paper-ex1":
        a = params.pop("a", DEFAULT_A_EXPR)
        _no_extra(name, params)
        spec = paper_ex1_spec(a)
        m = model_from_json(spec, name="paper-ex1")
        phi = lyapunov_quadratic(3)
        c_emp = empirical_lyapunov_constant(m, phi)
        meta = dict(m.meta, C_empirical=c_emp,
                    C_provenance="sampled max of (L phi)/phi over 20000 points of B(0,3), seed 0")
        return _replace(m, phi=phi, meta=meta)
    if name == "kolmogorov-2d":
        _no_extra(name, params)
        m = constant_model([[0.0, 0.0], [1.0, 0.0]], [[1.0]], name="kolmogorov-2d")
        spec = {"name": name, "d": 2, "d0": 1, "r": 1, "A": [[0.0, 0.0], [1.0, 0.0]],
                "b0": ["0"], "B0": [["1"]], "phi": "x^2 + y^2 + 1", "C": 1.0, "vars": ["x", "y"]}
        return _replace(m, phi=lyapunov_quadratic(2), C=1.0, meta=dict(m.meta, spec=spec))
    if name == "ou-constant":
        d = int(params.pop("d", 2))
        d0 = int(params.pop("d0", d))
        A = params.pop("A", None)
        Q0 = params.pop("Q0", None)
        _no_extra(name, params)
        if not 1 <= d0 <= d:
            raise InvalidInputError(f"need 1 <= d0 <= d, got d0={d0}, d={d}")
        A = chain_matrix(d, d0) if A is None else matcore.as_square(A)
        Q0 = np.eye(d0) if Q0 is None else np.atleast_2d(np.asarray(Q0, dtype=float))
        m = constant_model(A, Q0, name="ou-constant")
        C = max(float(np.trace(Q0)), float(np.max(np.linalg.eigvalsh(A + A.T))), 0.0)
        spec = {"name": name, "d": d, "d0": d0, "r": m.r, "A": A.tolist(),
                "b0": ["0"] * d0, "Q0": [[repr(float(v)) for v in row] for row in Q0],
                "C": C, "vars": _default_vars(d)}
        return _replace(m, phi=lyapunov_quadratic(d), C=C, meta=dict(m.meta, spec=spec))
    raise UnknownModelError(f"unknown model {name!r}; available: {', '.join(BUILTINS)}")


BUILTINS = ("paper-ex1", "kolmogorov-2d", "ou-constant")


def chain_matrix(d, d0):
    """Shift matrix feeding each block of ``d0`` coordinates into the next."""
    A = np.zeros((d, d))
    for i in range(d0, d):
        A[i, i - d0] = 1.0
    return A


def _no_extra(name, params):
    if params:
        raise InvalidInputError(f"{name} does not take parameters {sorted(params)}")


def _replace(m, **kw):
    return replace(m, **kw)


def load_model(ref, **params):
    """Built-in name, path to a JSON description, or a JSON dict."""
    if isinstance(ref, dict):
        return model_from_json(ref)
    if ref in BUILTINS:
        return builtin(ref, **params)
    p = Path(ref)
    if not p.exists():
        raise UnknownModelError(f"unknown model {ref!r}: not a builtin ({', '.join(BUILTINS)}) and no such file")
    try:
        spec = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{ref}: invalid JSON ({exc})") from None
    return model_from_json(spec, name=spec.get("name", p.stem))


# --- hypothesis checks ---------------------------------------------------------------


@dataclass
class HypothesisReport:
    """Sampled checks of the standing hypotheses.

    Nothing here certifies continuity; the oscillation table is data, and a
    clean report means only that no violation was found on ``n_probes``
    samples.
    """

    kalman: matcore.KalmanReport
    ellipticity_witness: np.ndarray
    continuity_modulus: list
    lyapunov_check: dict | None
    drift_sup: float | None
    n_probes: int
    region_radius: float
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    @property
    def statement(self):
        if self.ok:
            return f"no violation found on {self.n_probes} samples"
        return f"{len(self.violations)} violation(s) found on {self.n_probes} samples"

    def to_dict(self):
        w = self.ellipticity_witness
        return {
            "kalman": self.kalman.to_dict(),
            "ellipticity": {
                "min_eigenvalue": float(np.min(w)),
                "max_eigenvalue_of_min": float(np.max(w)),
                "n_nonpositive": int(np.sum(w <= 0)),
            },
            "continuity_modulus": self.continuity_modulus,
            "lyapunov_check": self.lyapunov_check,
            "drift_sup": self.drift_sup,
            "n_probes": self.n_probes,
            "region_radius": self.region_radius,
            "violations": self.violations,
            "statement": self.statement,
        }


def _witness(Z, i):
    return [float(v) for v in Z[i]]


def validate(model, R=3.0, n_probes=2000, seed=0, C=None):
    """Sample ``B(0, R)`` and check ellipticity, the Kalman condition and,
    when ``phi`` is declared, the Lyapunov inequality against ``C``
    (defaults to ``model.C``)."""
    if R <= 0:
        raise InvalidInputError("R must be positive")
    if n_probes < 100:
        raise InvalidInputError("n_probes must be at least 100")
    Z = sample_ball(n_probes, model.d, float(R), streams.generator(seed, 5))
    violations = []
    kal = model.kalman
    if not kal.hypoelliptic:
        violations.append({"kind": "kalman", "message": "Kalman rank condition fails",
                           "rank_sequence": list(kal.rank_sequence)})

    Q = model.diffusion_matrix(Z)
    if not np.all(np.isfinite(Q)):
        i = int(np.argmax(~np.all(np.isfinite(Q.reshape(n_probes, -1)), axis=1)))
        raise EvaluationError("Q0 is not finite", point=Z[i])
    sym = np.max(np.abs(Q - np.swapaxes(Q, -1, -2)), axis=(-1, -2))
    if np.any(sym > 1e-10 * (1 + np.max(np.abs(Q)))):
        i = int(np.argmax(sym))
        violations.append({"kind": "symmetry", "message": "Q0 is not symmetric", "witness": _witness(Z, i)})
    min_eig = np.linalg.eigvalsh(0.5 * (Q + np.swapaxes(Q, -1, -2)))[:, 0]
    if np.any(min_eig <= 0):
        i = int(np.argmin(min_eig))
        violations.append({"kind": "ellipticity", "message": "Q0 is not positive definite",
                           "witness": _witness(Z, i), "min_eigenvalue": float(min_eig[i])})

    tree = cKDTree(Z)
    table = []
    for frac in (4, 8, 16, 32):
        rad = R / frac
        pairs = tree.query_pairs(rad, output_type="ndarray")
        osc = 0.0
        if len(pairs):
            diff = Q[pairs[:, 0]] - Q[pairs[:, 1]]
            osc = float(np.max(np.sqrt(np.sum(diff * diff, axis=(-1, -2)))))
        table.append({"distance": rad, "n_pairs": int(len(pairs)), "max_oscillation": osc})

    drift_sup = None
    if model.has_drift:
        b = model.drift0(Z)
        if not np.all(np.isfinite(b)):
            i = int(np.argmax(~np.all(np.isfinite(b), axis=1)))
            raise EvaluationError("b0 is not finite", point=Z[i])
        drift_sup = float(np.max(np.linalg.norm(b, axis=1)))

    lyap = None
    C = model.C if C is None else float(C)
    if model.phi is not None:
        ratio = lyapunov_ratio(model, model.phi, Z)
        i = int(np.argmax(ratio))
        lyap = {"max_ratio": float(ratio[i]), "argmax": _witness(Z, i), "C_declared": C}
        if not math.isfinite(ratio[i]):
            violations.append({"kind": "lyapunov", "message": "L phi / phi not finite", "witness": _witness(Z, i)})
        elif C is not None and ratio[i] > C:
            violations.append({"kind": "lyapunov", "message": "L phi > C phi at a sample",
                               "witness": _witness(Z, i), "ratio": float(ratio[i])})

    return HypothesisReport(
        kalman=kal, ellipticity_witness=min_eig, continuity_modulus=table,
        lyapunov_check=lyap, drift_sup=drift_sup, n_probes=n_probes,
        region_radius=float(R), violations=violations,
    )
