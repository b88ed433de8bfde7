"""Command-line front end.

Every command resolves its parameters as CLI flags > config file > defaults,
runs, and emits a JSON envelope ``{command, version, seed, params, result}``,
a CSV table, or a plain-text table. Exit codes: 1 for invalid input, 2 for
numerical failure, 3 when a command refuses to run in the given regime or
the evidence is inconclusive.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .errors import DomainError, InconclusiveError, NumericalError, RegimeError, ValidationError
from .io import csv_text, dumps_json, to_jsonable, validate, write_output

SEED_ENV = "DISASTERBP_SEED"
EXIT_INPUT, EXIT_NUMERIC, EXIT_REGIME = 1, 2, 3

COMMON_DEFAULTS = {"seed": None, "replicas": 10_000, "t_end": 10.0, "output_path": None,
                   "format": "table", "workers": None}


@dataclass
class Param:
    name: str
    type: Callable
    default: object
    help: str = ""


@dataclass
class Outcome:
    result: dict
    header: tuple = ()
    rows: list = None
    summary: str = ""


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _json_arg(text):
    """Inline JSON, or a path to a JSON file."""
    if isinstance(text, dict):
        return text
    s = str(text).strip()
    if s.startswith("{"):
        return json.loads(s)
    try:
        return json.loads(Path(s).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"no such JSON file: {s}") from None


def _law(text):
    from .core import OffspringLaw
    return OffspringLaw.parse(text)


def _branching_cfg(P, t_end=None):
    from .branching import BranchingConfig
    law = _law(P["law"])
    return BranchingConfig(float(P["lambda"]), law, float(P["kappa"]), float(P["p"]),
                           z0=int(P["z0"]), t_end=float(P["t_end"] if t_end is None else t_end))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_phase(P, seed) -> Outcome:
    from . import analytics as an
    lam, kappa, p = float(P["lambda"]), float(P["kappa"]), float(P["p"])
    if P["law"]:
        law = _law(P["law"])
        rep = an.classify_homogeneous(lam, law, kappa, p, z0=int(P["z0"]))
        mu = law.mean
    else:
        mu = float(P["mu"])
        an._check_common(lam, kappa, p)
        regime, rate, tag = an._rate_from_growth(lam * (mu - 1.0), kappa, p)
        rep = an.PhaseReport(regime, an.criticality_index(lam * (mu - 1.0), kappa, p), rate, None, tag)
    thr = an.classify_mu_form(lam, mu, kappa, p)
    res = rep.to_dict()
    res["mu"] = mu
    res["thresholds"] = thr.to_dict()
    rows = [(k, res[k]) for k in ("nu", "regime", "decay_rate", "survival_prob", "formula_id")]
    rate = "-" if rep.decay_rate is None else f"{rep.decay_rate:.5f}"
    return Outcome(res, ("quantity", "value"), rows, f"regime {rep.regime}, nu={rep.nu:.5f}, rate {rate}")


def cmd_rates(P, seed) -> Outcome:
    from . import analytics as an
    lam, mu, kappa = float(P["lambda"]), float(P["mu"]), float(P["kappa"])
    rows = []
    for p in _floats(P["p_values"]):
        an._check_common(lam, kappa, p)
        g = lam * (mu - 1.0)
        regime, rate, _ = an._rate_from_growth(g, kappa, p)
        rows.append((p, an.criticality_index(g, kappa, p), regime, rate))
    res = {"rows": [dict(zip(("p", "nu", "regime", "decay_rate"), r)) for r in rows]}
    return Outcome(res, ("p", "nu", "regime", "decay_rate"), rows, f"{len(rows)} rates")


def cmd_simulate_bp(P, seed) -> Outcome:
    from .branching import simulate_branching
    cfg = _branching_cfg(P)
    rec = simulate_branching(cfg, seed)
    rows = list(rec.rows())
    res = {"summary": rec.summary(), "path": [{"t": t, "value": v, "kind": k} for t, v, k in rows]}
    return Outcome(res, ("t", "value", "kind"), rows,
                   f"{len(rows)} events, final size {rows[-1][1]:g}")


def _drift_from(P):
    from .core import branching_dual_drift, logistic_drift, power_drift
    kind = P["drift"]
    if kind == "logistic":
        return logistic_drift(float(P["delta"]), float(P["theta"])), math.inf
    if kind == "power":
        return power_drift(float(P["a"]), float(P["c"]), float(P["q"])), math.inf
    if kind == "bd-dual":
        return branching_dual_drift(_law(P["law"]), float(P["lambda"])), 1.0
    raise ValidationError(f"drift must be logistic, power or bd-dual, got {kind!r}")


def cmd_simulate_pjump(P, seed) -> Outcome:
    from .pjump import PJumpConfig, simulate_pjump
    alpha, dom = _drift_from(P)
    cfg = PJumpConfig.from_alpha(alpha, float(P["p"]), float(P["x0"]), domain_end=dom,
                                 t_end=float(P["t_end"]), kappa=float(P["kappa"]))
    rec = simulate_pjump(cfg, seed)
    rows = list(rec.rows())
    res = {"summary": rec.summary(), "regime": cfg.regime,
           "path": [{"t": t, "value": v, "kind": k} for t, v, k in rows]}
    return Outcome(res, ("t", "value", "kind"), rows, f"{len(rows)} points, regime {cfg.regime}")


def cmd_duality(P, seed) -> Outcome:
    from .branching import duality_grid
    cfg = _branching_cfg(P)
    reps = duality_grid(cfg, _floats(P["x"]), _floats(P["t"]), int(P["replicas"]), seed,
                        workers=P["workers"])
    zs = np.array([abs(r.z_score) for r in reps])
    res = {"cells": [r.to_dict() for r in reps], "max_abs_z": float(zs.max()),
           "fraction_above_3": float(np.mean(zs > 3.0))}
    rows = [(r.x, r.t, r.lhs, r.lhs_se, r.rhs, r.rhs_se, r.z_score) for r in reps]
    return Outcome(res, ("x", "t", "lhs", "lhs_se", "rhs", "rhs_se", "z_score"), rows,
                   f"{len(reps)} cells, max |z| = {zs.max():.2f}")


def cmd_survival(P, seed) -> Outcome:
    from . import analytics as an
    from .branching import survival_curve_splitting, survival_probability_mc
    cfg = _branching_cfg(P)
    rep = an.classify_homogeneous(cfg.lam, cfg.law, cfg.kappa, cfg.p, z0=cfg.z0)
    if rep.decay_rate is None:
        est, se = survival_probability_mc(cfg, float(P["t_end"]), int(P["replicas"]), seed)
        res = {"regime": rep.regime, "t": float(P["t_end"]), "survival_mc": est, "survival_se": se,
               "survival_closed_form": rep.survival_prob}
        return Outcome(res, ("t", "survival_mc", "survival_se"), [(float(P["t_end"]), est, se)],
                       f"P(Z_t>0) = {est:.5f} +- {se:.5f}")
    lo, hi = _floats(P["window"])
    curve = survival_curve_splitting(cfg, hi, int(P["particles"]), int(P["groups"]), seed,
                                     dt=float(P["dt"]))
    slope, se = curve.fit_rate((lo, hi))
    rows = list(zip(curve.times.tolist(), curve.log_prob.tolist(), curve.log_se.tolist()))
    res = {"regime": rep.regime, "rate_estimate": slope, "rate_std_err": se,
           "closed_form_rate": rep.decay_rate, "t_window": [lo, hi],
           "curve": [{"t": t, "log_prob": lp, "log_se": ls} for t, lp, ls in rows]}
    return Outcome(res, ("t", "log_prob", "log_se"), rows,
                   f"rate {slope:.5f} +- {se:.5f} (closed form {rep.decay_rate:.5f})")


def _schedule(P):
    from .schedule import RateSchedule
    spec = _json_arg(P["schedule"])
    validate(spec, "schedule")
    return RateSchedule.from_json(spec)


def cmd_inhom(P, seed) -> Outcome:
    from .core import as_stream
    from .inhom import classify_limit, dual_series, inhom_survival_mc, sample_disaster_path
    sched = _schedule(P)
    T, x, k, mode = float(P["t_end"]), float(P["x"]), int(P["k"]), P["mode"]
    stream = as_stream(seed)
    if mode == "survival":
        est, se = inhom_survival_mc(sched, T, k, int(P["replicas"]), stream, workers=P["workers"])
        res = {"mode": mode, "t": T, "k": k, "estimate": est, "std_err": se}
        return Outcome(res, ("t", "estimate", "std_err"), [(T, est, se)],
                       f"P(Z_t>0) = {est:.5f} +- {se:.5f}")
    path = sample_disaster_path(sched, T, stream.child(0))
    if mode == "series":
        grid = np.linspace(0.0, T, int(P["n_grid"]) + 1)[1:]
        states = dual_series(sched, path, x, grid)
        rows = [(s.t, s.L, s.log_I, s.X) for s in states]
        res = {"mode": mode, "n_disasters": len(path), "disaster_times": path.tau,
               "series": [{"t": a, "L": b, "log_I": c, "X": d} for a, b, c, d in rows]}
        return Outcome(res, ("t", "L", "log_I", "X"), rows,
                       f"{len(path)} disasters, X_T = {rows[-1][3]:.6g}")
    if mode == "limit":
        lim = classify_limit(sched, path, x, k, t_max=T)
        res = {"mode": mode, "n_disasters": len(path), **lim.to_dict()}
        rows = [(key, res[key]) for key in ("outcome", "value", "L_limit", "I_limit")]
        return Outcome(res, ("quantity", "value"), rows, f"limit outcome {lim.outcome}")
    raise ValidationError(f"mode must be series, survival or limit, got {mode!r}")


def _mechanism(P):
    from .csbp import BranchingMechanism
    if P["mechanism"]:
        spec = _json_arg(P["mechanism"])
    else:
        spec = {"b": float(P["b"]), "c": float(P["c"]), "kappa": float(P["kappa"]), "p": float(P["p"])}
    validate(spec, "mechanism")
    return BranchingMechanism.from_json(spec)


def cmd_csbp(P, seed) -> Outcome:
    from .core import as_stream
    from .csbp import csbp_decay_estimate, csbp_decay_rate, extinction_probability, largest_root
    mech = _mechanism(P)
    xi = largest_root(mech)
    z, t = float(P["z"]), float(P["t_end"])
    try:
        rate = csbp_decay_rate(mech)
    except RegimeError:
        if P["window"]:
            raise
        rate = None
    stream = as_stream(seed)
    ext = extinction_probability(mech, z, t, P["x_max"], int(P["replicas"]), stream.child(0))
    res = {"mechanism": mech.to_json(), "xi": xi, "closed_form_rate": rate,
           "lower_bound": math.exp(-z * xi), "extinction": ext.to_dict()}
    rows = [("xi", xi), ("closed_form_rate", rate), ("extinction", ext.value),
            ("extinction_se", ext.std_err), ("sensitivity", ext.sensitivity)]
    if rate is not None and P["window"]:
        fit = csbp_decay_estimate(mech, z, tuple(_floats(P["window"])), int(P["replicas"]), stream.child(1))
        res["rate_estimate"] = fit.rate
        res["rate_std_err"] = fit.std_err
        rows.append(("rate_estimate", fit.rate))
    return Outcome(res, ("quantity", "value"), rows,
                   f"xi={xi:.6g}, P(extinct by t)={ext.value:.5f} +- {ext.std_err:.5f}")


def cmd_ldp(P, seed) -> Outcome:
    from .regvar import ldp_empirical, ldp_rate
    x, t = float(P["x"]), float(P["t_end"])
    est = ldp_empirical(x, t, int(P["replicas"]), P["event"], seed, workers=P["workers"])
    theory = ldp_rate(x)
    res = {"x": x, "t": t, "event": P["event"], "rate_theory": theory, "estimate": est.to_dict(),
           "abs_error": abs(est.rate - theory)}
    rows = [(x, t, P["event"], theory, est.rate, est.ci[0], est.ci[1])]
    return Outcome(res, ("x", "t", "event", "rate_theory", "rate_estimate", "ci_low", "ci_high"), rows,
                   f"rate {est.rate:.5f} vs {theory:.5f}")


def cmd_regvar(P, seed) -> Outcome:
    from .regvar import RegVarFunction, d_integral_check
    from .schedule import RateSchedule
    kind = P["intensity"]
    if kind == "constant":
        sched = RateSchedule.constant(0.0, 0.0, float(P["kappa"]), 1.0)
    elif kind == "power":
        sched = RateSchedule.power_intensity(float(P["kappa"]), float(P["gamma"]))
    else:
        raise ValidationError(f"intensity must be constant or power, got {kind!r}")
    beta = None if P["beta"] is None else float(P["beta"])
    f = RegVarFunction.power(float(P["exponent"]), beta)
    rep = d_integral_check(f, sched, _floats(P["t_grid"]), int(P["replicas"]), seed)
    res = rep.to_dict()
    rows = rep.ratio_rows()
    if rows:
        res["ratio_series"] = [{"t": a, "mean": b, "sd": c} for a, b, c in rows]
        header = ("t", "ratio_mean", "ratio_sd")
    else:
        means = rep.sums.mean(axis=0)
        rows = list(zip(rep.t_grid.tolist(), means.tolist()))
        header = ("t", "partial_sum_mean")
    return Outcome(res, header, rows, f"verdict {rep.verdict}")


LAW_DEFAULT = "0:0.5,2:0.5"
E_INV = math.exp(-1.0)

COMMANDS: dict[str, tuple[str, list[Param], Callable]] = {
    "phase": ("closed-form regime, criticality index and decay rate", [
        Param("lambda", float, 1.0, "branching rate"),
        Param("mu", float, 1.0, "offspring mean (ignored when --law is given)"),
        Param("kappa", float, 1.0, "disaster rate"),
        Param("p", float, 0.5, "per-individual survival probability at a disaster"),
        Param("law", str, None, "offspring law as k:prob pairs, e.g. 0:0.5,2:0.5"),
        Param("z0", int, 1, "initial population"),
    ], cmd_phase),
    "rates": ("decay rate over a list of p values", [
        Param("lambda", float, 1.0), Param("mu", float, 1.0), Param("kappa", float, 1.0),
        Param("p_values", str, "0.05,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", "comma-separated p values"),
    ], cmd_rates),
    "simulate-bp": ("one branching path with disasters", [
        Param("lambda", float, 1.0), Param("law", str, LAW_DEFAULT), Param("kappa", float, 1.0),
        Param("p", float, 0.5), Param("z0", int, 1),
    ], cmd_simulate_bp),
    "simulate-pjump": ("one p-jump path", [
        Param("drift", str, "logistic", "logistic | power | bd-dual"),
        Param("delta", float, 1.0), Param("theta", float, 1.0),
        Param("a", float, 1.0), Param("c", float, 1.0), Param("q", float, 2.0),
        Param("lambda", float, 1.0), Param("law", str, LAW_DEFAULT),
        Param("kappa", float, 1.0), Param("p", float, 0.5), Param("x0", float, 0.5),
    ], cmd_simulate_pjump),
    "duality-check": ("both sides of the pgf duality on an (x, t) grid", [
        Param("x", str, "0.5", "comma-separated x values"), Param("t", str, "1", "comma-separated times"),
        Param("lambda", float, 1.0), Param("law", str, LAW_DEFAULT), Param("kappa", float, 1.0),
        Param("p", float, 0.5), Param("z0", int, 1),
    ], cmd_duality),
    "survival": ("survival curve and regressed decay rate", [
        Param("lambda", float, 1.0), Param("law", str, LAW_DEFAULT), Param("kappa", float, 1.0),
        Param("p", float, 0.5), Param("z0", int, 1),
        Param("window", str, "20,80", "fit window lo,hi"),
        Param("particles", int, 20_000, "particles per splitting group"),
        Param("groups", int, 10, "independent splitting groups"),
        Param("dt", float, 1.0, "resampling interval"),
    ], cmd_survival),
    "inhom": ("time-inhomogeneous birth-death dual", [
        Param("schedule", str, json.dumps({"kind": "constant", "b": 2.0, "d": 0.0, "kappa": 1.0, "p": E_INV}),
              "schedule as inline JSON or a JSON file path"),
        Param("mode", str, "series", "series | survival | limit"),
        Param("x", float, 1.0), Param("k", int, 1), Param("n_grid", int, 100),
    ], cmd_inhom),
    "csbp": ("continuous-state branching with disasters", [
        Param("mechanism", str, None, "mechanism as inline JSON or a JSON file path"),
        Param("b", float, 0.2), Param("c", float, 1.0), Param("kappa", float, 1.0), Param("p", float, E_INV),
        Param("z", float, 1.0), Param("x_max", float, None),
        Param("window", str, None, "optional fit window lo,hi for the decay rate"),
    ], cmd_csbp),
    "ldp-check": ("Poisson large-deviation frequencies", [
        Param("x", float, 2.0), Param("event", str, "upper", "upper | lower | pathwise-lower"),
    ], cmd_ldp),
    "regvar-check": ("integrals against a Poisson counting process", [
        Param("exponent", float, 0.5, "f(s) = s^exponent"),
        Param("beta", float, None, "declared exponent of f after the time change (default: exponent)"),
        Param("intensity", str, "constant", "constant | power"),
        Param("kappa", float, 1.0, "constant rate, or coefficient c of c s^gamma"),
        Param("gamma", float, 1.0),
        Param("t_grid", str, "10,100,1000,10000"),
    ], cmd_regvar),
}


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="disasterbp",
                                 description="Branching processes with disasters and their duals.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (help_, params, _) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_, description=help_,
                            argument_default=argparse.SUPPRESS)
        g = sp.add_argument_group("common")
        g.add_argument("--seed", type=int, help=f"64-bit seed (default: ${SEED_ENV} or 0)")
        g.add_argument("--replicas", type=int)
        g.add_argument("--t-end", dest="t_end", type=float)
        g.add_argument("--output", "-o", dest="output_path")
        g.add_argument("--format", choices=("csv", "json", "table"))
        g.add_argument("--config", help="JSON config file; CLI flags take precedence")
        g.add_argument("--workers", type=int)
        for prm in params:
            flag = "--" + prm.name.replace("_", "-")
            sp.add_argument(flag, dest=prm.name, type=prm.type,
                            help=f"{prm.help} (default: {prm.default})".strip())
    return ap


def resolve(command: str, cli: dict, environ=os.environ) -> tuple[dict, int]:
    """Merge defaults, config file and flags; return (params, seed)."""
    _, params, _ = COMMANDS[command]
    merged = dict(COMMON_DEFAULTS)
    merged.update({p.name: p.default for p in params})
    cfg_path = cli.pop("config", None)
    if cfg_path:
        try:
            cfg = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {cfg_path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {cfg_path} is not valid JSON: {exc}") from None
        validate(cfg, "config")
        if cfg.get("command", command) != command:
            raise ValidationError(f"config file is for command {cfg['command']!r}, not {command!r}")
        known = {p.name for p in params}
        extra = set(cfg.get("params", {})) - known
        if extra:
            raise ValidationError(f"unknown parameters for {command}: {sorted(extra)}")
        merged.update(cfg.get("params", {}))
        merged.update({k: v for k, v in cfg.items() if k in COMMON_DEFAULTS})
    merged.update(cli)
    seed = merged.pop("seed")
    if seed is None:
        env = environ.get(SEED_ENV)
        try:
            seed = int(env) if env not in (None, "") else 0
        except ValueError:
            raise ValidationError(f"${SEED_ENV} must be an integer, got {env!r}") from None
    seed = int(seed)
    if not (0 <= seed < 2 ** 64):
        raise ValidationError(f"seed must lie in [0, 2^64), got {seed}")
    return merged, seed


def _table(out: Outcome) -> str:
    cells = [[str(h) for h in out.header]]
    for row in out.rows or []:
        cells.append([_fmt(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def render(command: str, params: dict, seed: int, out: Outcome, fmt: str) -> str:
    if fmt == "json":
        shown = {k: v for k, v in params.items() if k not in ("output_path", "format", "workers")}
        env = {"command": command, "version": __version__, "seed": seed,
               "params": shown, "result": out.result}
        env = to_jsonable(env)
        validate(env, "output")
        return dumps_json(env)
    if fmt == "csv":
        return csv_text(out.header, out.rows or [])
    return _table(out)


def run(command: str, cli: dict, environ=os.environ) -> tuple[str, Outcome, dict]:
    params, seed = resolve(command, dict(cli), environ)
    out = COMMANDS[command][2](params, seed)
    text = render(command, params, seed, out, params["format"])
    return text, out, params


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    cli = vars(ns)
    command = cli.pop("command")
    try:
        text, out, params = run(command, cli)
        write_output(text, params["output_path"])
    except (ValidationError, DomainError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RegimeError, InconclusiveError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except (NumericalError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    where = params["output_path"] or "stdout"
    print(f"{command}: {out.summary} -> {where}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
