"""Command-line front end.

Exit codes: 0 success or pass, 2 domain-level failure (hypothesis
violation, failed comparison, unverifiable cover), 1 usage or
configuration error.
"""

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, fields, localizer, sdesim, verifier
from .ensemble import Ball
from .errors import (
    CapabilityError,
    CoverConstructionError,
    DegSDEError,
    EvaluationError,
    HypothesisViolation,
    InvalidInputError,
)
from .models import load_model, validate
from .oukernel import OUModel, det_smalltime_fit

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

COMMON_DEFAULTS = {"model_param": {}, "seed": 0}
DEFAULTS = {
    "check": {"R": 3.0, "n_probes": 2000, "C": None},
    "simulate": {"scheme": "exp-euler", "h": 2.0**-6, "T": 1.0, "n": 1000, "z0": None,
                 "record_every": 1, "level": 4, "substeps": 1, "exit_radius": None, "out": None},
    "compare": {"scheme_a": "euler", "scheme_b": "exp-euler", "h_a": 2.0**-6, "h_b": 2.0**-6,
                "T": 2.0, "n": 10000, "z0": None, "seed_a": 1, "seed_b": 2, "lambdas": [2.0, 4.0, 8.0],
                "battery": "default", "battery_scale": 1.0, "z_crit": 4.0, "record_every": 16,
                "drift_shift_b": 0.0, "model_b": None, "out": None},
    "probe": {"probe": "det-slope", "point": None, "lam": 4.0, "p": None, "f": "gauss0",
              "grid_half_width": 2.0, "grid_n": 5, "budget": 4000, "fd_step": 0.05, "scale": 1.0},
    "cover": {"R": 3.0, "gamma": 0.1, "oversample": 2, "probe_density": 32, "max_inline_charts": 10000,
              "out": None},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(s):
    try:
        return [float(v) for v in str(s).replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None


def _kv(s):
    if "=" not in s:
        raise argparse.ArgumentTypeError("expected KEY=VALUE")
    k, v = s.split("=", 1)
    try:
        return k, json.loads(v)
    except json.JSONDecodeError:
        return k, v


def build_parser():
    S = argparse.SUPPRESS
    p = _Parser(prog="degsde", description="Degenerate SDE simulation and verification toolkit.")
    p.add_argument("--version", action="version", version=f"degsde {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("model", nargs="?", default=S, help="builtin name or path to a model JSON")
        sp.add_argument("--config", default=S, help="JSON file of parameters (explicit flags win)")
        sp.add_argument("--seed", type=int, default=S)
        sp.add_argument("--workers", type=int, default=S, help="parallel workers (results do not depend on it)")
        sp.add_argument("--model-param", dest="model_param", type=_kv, action="append", default=S,
                        metavar="KEY=VALUE", help="builtin model parameter, JSON value")

    c = sub.add_parser("check", help="sampled hypothesis checks")
    common(c)
    c.add_argument("--R", type=float, default=S)
    c.add_argument("--n-probes", dest="n_probes", type=int, default=S)
    c.add_argument("--C", type=float, default=S, help="declared Lyapunov constant")

    s = sub.add_parser("simulate", help="simulate a path ensemble")
    common(s)
    s.add_argument("--scheme", choices=["euler", "exp-euler", "frozen-dyadic"], default=S)
    s.add_argument("--h", type=float, default=S)
    s.add_argument("--T", type=float, default=S)
    s.add_argument("--n", type=int, default=S)
    s.add_argument("--z0", type=_floats, default=S)
    s.add_argument("--record-every", dest="record_every", type=int, default=S)
    s.add_argument("--level", type=int, default=S, help="dyadic level for frozen-dyadic")
    s.add_argument("--substeps", type=int, default=S)
    s.add_argument("--exit-radius", dest="exit_radius", type=float, default=S)
    s.add_argument("--out", default=S, help="output directory for data.csv and meta.json")

    m = sub.add_parser("compare", help="compare the laws of two schemes")
    common(m)
    for tag in ("a", "b"):
        m.add_argument(f"--scheme-{tag}", dest=f"scheme_{tag}", choices=["euler", "exp-euler"], default=S)
        m.add_argument(f"--h-{tag}", dest=f"h_{tag}", type=float, default=S)
        m.add_argument(f"--seed-{tag}", dest=f"seed_{tag}", type=int, default=S)
    m.add_argument("--model-b", dest="model_b", default=S, help="alternative model for ensemble B")
    m.add_argument("--drift-shift-b", dest="drift_shift_b", type=float, default=S,
                   help="add a constant to the first drift component of model B")
    m.add_argument("--T", type=float, default=S)
    m.add_argument("--n", type=int, default=S)
    m.add_argument("--z0", type=_floats, default=S)
    m.add_argument("--lambdas", type=_floats, default=S)
    m.add_argument("--battery", default=S, help="'default' or comma-separated member labels")
    m.add_argument("--battery-scale", dest="battery_scale", type=float, default=S)
    m.add_argument("--z-crit", dest="z_crit", type=float, default=S)
    m.add_argument("--record-every", dest="record_every", type=int, default=S)
    m.add_argument("--out", default=S, help="directory for comparison.csv")

    q = sub.add_parser("probe", help="analytic-estimate probes on the frozen OU model")
    common(q)
    q.add_argument("probe", nargs="?", choices=["det-slope", "sup-lp", "d2x"], default=S)
    q.add_argument("--point", type=_floats, default=S, help="freezing point (default origin)")
    q.add_argument("--lambda", dest="lam", type=float, default=S)
    q.add_argument("--p", type=float, default=S)
    q.add_argument("--f", default=S, help="battery member label")
    q.add_argument("--scale", type=float, default=S, help="multiply the test function")
    q.add_argument("--grid-half-width", dest="grid_half_width", type=float, default=S)
    q.add_argument("--grid-n", dest="grid_n", type=int, default=S)
    q.add_argument("--budget", type=int, default=S)
    q.add_argument("--fd-step", dest="fd_step", type=float, default=S)

    v = sub.add_parser("cover", help="build and verify a covering atlas")
    common(v)
    v.add_argument("--R", type=float, default=S)
    v.add_argument("--gamma", type=float, default=S)
    v.add_argument("--oversample", type=int, default=S)
    v.add_argument("--probe-density", dest="probe_density", type=int, default=S)
    v.add_argument("--max-inline-charts", dest="max_inline_charts", type=int, default=S)
    v.add_argument("--out", default=S, help="file for the full atlas JSON")
    return p


def resolve_config(command, explicit):
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(COMMON_DEFAULTS)
    cfg.update(DEFAULTS[command])
    path = explicit.get("config")
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
        unknown = set(data) - set(cfg) - {"model", "workers"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    for k, v in explicit.items():
        if k in ("config", "command"):
            continue
        cfg[k] = dict(v) if k == "model_param" else v
    if "model" not in cfg:
        raise UsageError("a model (builtin name or JSON path) is required")
    workers = int(cfg.pop("workers", 1) or 1)
    if workers < 1:
        raise UsageError("workers must be at least 1")
    return cfg, workers


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    return str(o)


def dumps(obj):
    return json.dumps(obj, indent=2, default=_json_default, allow_nan=True)


def _report(command, cfg, result, started, workers):
    return {
        "tool": "degsde",
        "version": __version__,
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "result": result,
        "run": {"wall_clock_s": time.perf_counter() - started, "workers": workers},
    }


def _z0(cfg, m):
    z0 = cfg.get("z0")
    z0 = np.ones(m.d) if z0 is None else np.asarray(z0, dtype=float)
    if z0.shape != (m.d,):
        raise InvalidInputError(f"z0 must have {m.d} components")
    return z0


def _run_scheme(m, scheme, z0, h, T, n, seed, workers, record_every, cfg):
    domain = None if cfg.get("exit_radius") is None else Ball(np.zeros(m.d), cfg["exit_radius"])
    if scheme == "frozen-dyadic":
        return sdesim.frozen_dyadic_scheme(m, cfg["level"], z0, n, seed, T=T, substeps=cfg["substeps"],
                                           domain=domain, record_every=record_every, workers=workers)
    return sdesim.SCHEMES[scheme](m, z0, h, T, n, seed, domain=domain, record_every=record_every,
                                  workers=workers)


# --- commands ------------------------------------------------------------------------


def cmd_check(cfg, workers):
    m = load_model(cfg["model"], **cfg["model_param"])
    try:
        rep = validate(m, cfg["R"], cfg["n_probes"], seed=cfg["seed"], C=cfg["C"])
    except HypothesisViolation as exc:
        return {"violations": [{"kind": "hypothesis", "message": str(exc),
                                "witness": None if exc.witness is None else exc.witness.tolist()}]}, EXIT_FAIL
    return rep.to_dict(), EXIT_OK if rep.ok else EXIT_FAIL


def ensemble_csv(ens):
    """CSV text with columns ``path_id, t, z_1..z_d, stopped``; floats in
    shortest round-trip form."""
    d = ens.d
    header = ",".join(["path_id", "t"] + [f"z_{i + 1}" for i in range(d)] + ["stopped"])
    lines = [header]
    times = [repr(float(t)) for t in ens.times]
    for p in range(ens.n_paths):
        rows = ens.states[p].tolist()
        et = ens.exit_time[p]
        for i, t in enumerate(ens.times):
            stopped = 1 if t >= et else 0
            lines.append(f"{p},{times[i]}," + ",".join(map(repr, rows[i])) + f",{stopped}")
    return "\n".join(lines) + "\n"


def cmd_simulate(cfg, workers):
    m = load_model(cfg["model"], **cfg["model_param"])
    z0 = _z0(cfg, m)
    if cfg["scheme"] == "frozen-dyadic" and m.has_drift:
        raise CapabilityError("frozen-dyadic requires a model without drift")
    ens = _run_scheme(m, cfg["scheme"], z0, cfg["h"], cfg["T"], cfg["n"], cfg["seed"], workers,
                      cfg["record_every"], cfg)
    summary = {
        "n_paths": ens.n_paths, "n_times": len(ens.times), "scheme": ens.scheme, "step": ens.step,
        "stopped_fraction": float(np.mean(ens.stopped)), "diverged_fraction": ens.diverged_fraction,
        "params": ens.params,
    }
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "data.csv").write_text(ensemble_csv(ens))
        summary["files"] = ["data.csv", "meta.json"]
    return summary, EXIT_OK


def _battery(cfg, d, z0):
    members = fields.default_battery(d, origin=z0, scale=cfg["battery_scale"])
    if cfg["battery"] in (None, "default"):
        return members
    wanted = [s.strip() for s in str(cfg["battery"]).split(",")]
    byname = {f.label: f for f in members}
    missing = [w for w in wanted if w not in byname]
    if missing:
        raise InvalidInputError(f"unknown battery members {missing}; available: {list(byname)}")
    return [byname[w] for w in wanted]


def shifted_drift(m, shift):
    """Model with ``shift`` added to the first drift component."""
    shift = float(shift)

    def b0(Z):
        b = m.drift0(Z).copy()
        b[..., 0] += shift
        return b

    return replace(m, b0=b0, name=f"{m.name}+shift({shift:g})")


def cmd_compare(cfg, workers):
    mA = load_model(cfg["model"], **cfg["model_param"])
    mB = mA if cfg["model_b"] is None else load_model(cfg["model_b"])
    if cfg["drift_shift_b"]:
        mB = shifted_drift(mB, cfg["drift_shift_b"])
    z0 = _z0(cfg, mA)
    ensA = _run_scheme(mA, cfg["scheme_a"], z0, cfg["h_a"], cfg["T"], cfg["n"], cfg["seed_a"], workers,
                       cfg["record_every"], cfg)
    ensB = _run_scheme(mB, cfg["scheme_b"], z0, cfg["h_b"], cfg["T"], cfg["n"], cfg["seed_b"], workers,
                       cfg["record_every"], cfg)
    cmp = verifier.compare_laws(ensA, ensB, _battery(cfg, mA.d, z0), cfg["lambdas"], cfg["z_crit"])
    if ensA.scheme == ensB.scheme and mA is mB:
        cmp.caveats.append("self-comparison: about 95% or more of seed pairs pass under the null (z_crit 4)")
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(cmp.to_csv())
    return cmp.to_dict(), EXIT_OK if cmp.passed else EXIT_FAIL


def frozen_ou(m, point=None):
    """OU model with the diffusion matrix frozen at ``point``."""
    point = np.zeros(m.d) if point is None else np.asarray(point, dtype=float)
    return OUModel(m.A, m.diffusion_matrix(point[None, :])[0])


def cmd_probe(cfg, workers):
    m = load_model(cfg["model"], **cfg["model_param"])
    ou = frozen_ou(m, cfg["point"])
    kind = cfg["probe"]
    if kind == "det-slope":
        slope, intercept, rms = det_smalltime_fit(ou)
        bound = float(2 * ou.k + 1)
        ok = slope >= bound - 0.05
        res = {"slope": slope, "intercept": intercept, "rms": rms, "k": ou.k, "bound": bound,
               "bound_satisfied": bool(ok), "frozen_Q0": ou.Q0.tolist()}
        return res, EXIT_OK if ok else EXIT_FAIL
    battery = {f.label: f for f in fields.default_battery(m.d)}
    if cfg["f"] not in battery:
        raise InvalidInputError(f"unknown test function {cfg['f']!r}; available: {list(battery)}")
    f = battery[cfg["f"]]
    if cfg["scale"] != 1.0:
        f = f.scaled(cfg["scale"])
    p = float(cfg["p"] if cfg["p"] is not None else ou.p_default)
    hw = float(cfg["grid_half_width"])
    grid, vol = verifier.tensor_grid(-hw * np.ones(m.d), hw * np.ones(m.d), int(cfg["grid_n"]))
    if kind == "sup-lp":
        r = verifier.probe_sup_lp(ou, f, cfg["lam"], p, grid, cfg["budget"], seed=cfg["seed"])
        return r.to_dict(), EXIT_OK
    r = verifier.probe_second_derivative(ou, f, cfg["lam"], p, grid, cfg["fd_step"], cfg["budget"],
                                         seed=cfg["seed"], cell_volume=vol)
    return r.to_dict(), EXIT_FAIL if r.inconclusive else EXIT_OK


def cmd_cover(cfg, workers):
    m = load_model(cfg["model"], **cfg["model_param"])
    try:
        atlas = localizer.build_cover(m, cfg["R"], cfg["gamma"], cfg["probe_density"], seed=cfg["seed"])
    except (CoverConstructionError, HypothesisViolation) as exc:
        return {"error": type(exc).__name__, "message": str(exc),
                "witness": None if exc.witness is None else exc.witness.tolist()}, EXIT_FAIL
    verdict = localizer.verify_cover(atlas, m, cfg["oversample"])
    atlas = replace(atlas, verified=verdict.chart_ok.copy())
    inline = len(atlas) <= cfg["max_inline_charts"]
    res = {"atlas": atlas.to_dict(include_charts=inline), "verification": verdict.to_dict()}
    if not inline:
        res["atlas"]["charts_omitted"] = "more charts than --max-inline-charts; use --out for the full atlas"
    if cfg["out"]:
        Path(cfg["out"]).write_text(dumps(atlas.to_dict(include_charts=True)))
    return res, EXIT_OK if verdict.ok else EXIT_FAIL


COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "compare": cmd_compare, "probe": cmd_probe,
            "cover": cmd_cover}


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    started = time.perf_counter()
    try:
        ns = build_parser().parse_args(argv)
        if not ns.command:
            raise UsageError("a subcommand is required: " + " | ".join(COMMANDS))
        explicit = {k: v for k, v in vars(ns).items() if k != "command"}
        cfg, workers = resolve_config(ns.command, explicit)
        result, code = COMMANDS[ns.command](cfg, workers)
    except UsageError as exc:
        print(f"degsde: usage error: {exc}", file=stderr)
        return EXIT_ERROR
    except (DegSDEError, ValueError, TypeError, LookupError, OSError) as exc:
        msg = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, EvaluationError) and exc.point is not None:
            msg["witness"] = np.asarray(exc.point).tolist()
        print(dumps(msg), file=stderr)
        return EXIT_ERROR
    report = _report(ns.command, cfg, result, started, workers)
    if ns.command == "simulate" and cfg.get("out"):
        Path(cfg["out"], "meta.json").write_text(dumps(report) + "\n")
    print(dumps(report), file=stdout)
    return code


if __name__ == "__main__":
    sys.exit(main())
