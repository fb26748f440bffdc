"""Command line entry point: config parsing, dispatch, run registry, sweeps.

Configs are small YAML mappings with a closed set of keys per scenario::

    scenario: bootstrap
    alpha: 0.9
    beta: 1
    gamma: 0.45

Every run gets an id hashed from its validated config.  Artifacts go to
``<out>/<run_id>/<artifact>.csv`` and one JSON record per run is appended to
``<out>/registry.jsonl``.
"""
from __future__ import annotations

import argparse
import fcntl
import hashlib
import itertools
import json
import math
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import yaml

SCHEMA_VERSION = 1
SCENARIOS = ("bootstrap", "semigroup-decay", "simulate", "verify", "sweep")

_EXPONENT_KEYS = {"alpha": 1.0, "beta": 1.0}
_SCHEMA = {
    "bootstrap": {**_EXPONENT_KEYS, "gamma": 0.3, "max_steps": 200},
    "semigroup-decay": {"alpha": 1.0, "gamma": 0.25, "window": [100.0, 10000.0],
                        "samples": 25},
    "simulate": {**_EXPONENT_KEYS, "N": 16, "L": 2 * math.pi, "n": 16, "dt": 1e-3, "T": 1.0,
                 "seed": 0, "energy": 1.0, "spectral_slope": -1.0, "k_cutoff": 3.0,
                 "record_every": 10, "nonlinear": True},
    "verify": {**_EXPONENT_KEYS, "gamma": 0.25, "N": 32, "L": 32 * math.pi, "n": 64,
               "dt": 0.05, "seed": 0, "amplitude": 1.0, "samples": 40, "tolerance": 0.05},
}


class ConfigError(ValueError):
    def __init__(self, msg, line=None, col=None):
        where = f"line {line}, col {col}: " if line is not None else ""
        super().__init__(where + msg)
        self.line, self.col = line, col


@dataclass
class RunConfig:
    scenario: str
    params: dict
    out: str | None = None
    schema: int = SCHEMA_VERSION
    target: str | None = None             # sweeps only
    grid: dict = field(default_factory=dict)

    def snapshot(self) -> dict:
        snap = {"schema": self.schema, "scenario": self.scenario, **self.params}
        if self.scenario == "sweep":
            snap.update(target=self.target, grid=self.grid)
        return snap

    @property
    def run_id(self) -> str:
        return _digest(self.snapshot())[:12]


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


# --- parsing -----------------------------------------------------------------

def _marks(text):
    """Map top-level key -> (line, col), 1-based."""
    node = yaml.compose(text)
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, _ in node.value:
            out[k.value] = (k.start_mark.line + 1, k.start_mark.column + 1)
            if k.value == "grid" and isinstance(_, yaml.MappingNode):
                for gk, _gv in _.value:
                    out["grid." + gk.value] = (gk.start_mark.line + 1, gk.start_mark.column + 1)
    return out


def _number(key, v, mark, integer=False):
    if isinstance(v, bool):
        raise ConfigError(f"{key} must be a number, got {v!r}", *mark)
    if isinstance(v, str):
        try:
            v = Fraction(v.strip())
        except ValueError:
            raise ConfigError(f"{key} must be a number or fraction, got {v!r}", *mark) from None
    if integer:
        if int(v) != v:
            raise ConfigError(f"{key} must be an integer, got {v!r}", *mark)
        return int(v)
    if not isinstance(v, (int, float, Fraction)):
        raise ConfigError(f"{key} must be a number, got {v!r}", *mark)
    return str(v) if isinstance(v, Fraction) else float(v)


_INTEGER_KEYS = {"N", "n", "seed", "samples", "max_steps", "record_every"}


def _coerce_params(scenario, raw, marks, prefix=""):
    defaults = _SCHEMA[scenario]
    params = dict(defaults)
    for key, v in raw.items():
        mark = marks.get(prefix + key, (None, None))
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r} for scenario {scenario!r}; "
                              f"allowed: {', '.join(sorted(defaults))}", *mark)
        if key == "nonlinear":
            if not isinstance(v, bool):
                raise ConfigError("nonlinear must be true or false", *mark)
            params[key] = v
        elif key == "window":
            if not (isinstance(v, list) and len(v) == 2):
                raise ConfigError("window must be a two-element list [t_lo, t_hi]", *mark)
            params[key] = [_number(key, x, mark) for x in v]
        else:
            params[key] = _number(key, v, mark, integer=key in _INTEGER_KEYS)
    _validate(scenario, params, marks, prefix)
    return params


def _f(x):
    return float(Fraction(x)) if isinstance(x, str) else float(x)


def _validate(scenario, p, marks, prefix=""):
    """Check module preconditions before anything runs."""
    def fail(key, msg):
        raise ConfigError(msg, *marks.get(prefix + key, (None, None)))

    for key in ("alpha", "beta"):
        if key in p:
            v = _f(p[key])
            lo = 0.75 if scenario != "semigroup-decay" else 0.0
            if not (lo < v <= 1):
                rng = "3/4 < alpha, beta <= 1" if lo else "0 < alpha <= 1"
                fail(key, f"{key}={p[key]} violates the hypothesis {rng}")
    if "gamma" in p:
        g = _f(p["gamma"])
        top = max(_f(p.get("alpha", 1)), _f(p.get("beta", 0)))
        if scenario in ("verify", "bootstrap"):
            if not (0 < g <= 0.5):
                fail("gamma", f"gamma={p['gamma']} must lie in (0, 1/2]")
            if scenario == "verify" and top == 1 and g == 0.5:
                fail("gamma", "gamma=1/2 is excluded when max(alpha, beta) = 1")
        elif not g > 0:
            fail("gamma", "gamma must be positive")
    for key in ("N", "n", "samples", "max_steps", "record_every"):
        if key in p and p[key] < 1:
            fail(key, f"{key} must be a positive integer")
    if "N" in p and (p["N"] < 4 or p["N"] % 2):
        fail("N", "N must be even and at least 4")
    for key in ("L", "dt", "T", "tolerance", "amplitude", "energy", "k_cutoff"):
        if key in p and not _f(p[key]) > 0 and not (key in ("amplitude", "energy")
                                                    and _f(p[key]) == 0):
            fail(key, f"{key} must be positive")
    if "dt" in p and "T" in p and not _f(p["dt"]) < _f(p["T"]):
        fail("dt", "dt must be smaller than T")
    if "window" in p:
        lo, hi = p["window"]
        if not 0 < lo < hi:
            fail("window", "window needs 0 < t_lo < t_hi")
    if scenario == "verify":
        from .decay_lab import WindowTooNarrow, algebraic_window
        from .solenoidal import WaveGrid
        try:
            lo, hi = algebraic_window(WaveGrid(p["N"], _f(p["L"])), _f(p["alpha"]),
                                      _f(p["beta"]))
        except WindowTooNarrow as e:
            fail("L", str(e))
        if not _f(p["dt"]) < hi:
            fail("dt", "dt must be smaller than the window length")


def parse_config(text: str, scenario: str | None = None) -> RunConfig:
    """Parse and validate a YAML config; ``scenario`` comes from the subcommand."""
    try:
        raw = yaml.safe_load(text) if text.strip() else {}
        marks = _marks(text) if text.strip() else {}
    except yaml.MarkedYAMLError as e:
        m = e.problem_mark
        raise ConfigError(f"parse error: {e.problem}", m.line + 1, m.column + 1) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of key: value", 1, 1)
    raw = dict(raw)
    declared = raw.pop("scenario", None)
    if declared is not None and scenario is not None and declared != scenario:
        raise ConfigError(f"config is for scenario {declared!r}, not {scenario!r}",
                          *marks.get("scenario", (None, None)))
    scenario = scenario or declared
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {', '.join(SCENARIOS)}",
                          *marks.get("scenario", (None, None)))
    schema = raw.pop("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {schema!r}",
                          *marks.get("schema", (None, None)))
    out = raw.pop("out", None)
    if scenario != "sweep":
        return RunConfig(scenario, _coerce_params(scenario, raw, marks), out)

    target = raw.pop("target", None)
    grid = raw.pop("grid", None)
    if target not in _SCHEMA:
        raise ConfigError(f"sweep target must be one of {', '.join(_SCHEMA)}",
                          *marks.get("target", (None, None)))
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("sweep needs a non-empty 'grid' mapping key -> list of values",
                          *marks.get("grid", (None, None)))
    for key, values in grid.items():
        mark = marks.get("grid." + key, (None, None))
        if key not in _SCHEMA[target]:
            raise ConfigError(f"unknown grid key {key!r} for target {target!r}", *mark)
        if not isinstance(values, list) or not values:
            raise ConfigError(f"grid.{key} must be a non-empty list", *mark)
    base = _coerce_params(target, raw, marks)
    return RunConfig("sweep", base, out, target=target, grid=grid)


def expand_sweep(cfg: RunConfig) -> list[RunConfig]:
    """Cartesian product of the grid over the base parameters.

    Points that fail validation become configs carrying the error, so a sweep
    reports them as failures instead of aborting.
    """
    keys = list(cfg.grid)
    runs = []
    for combo in itertools.product(*(cfg.grid[k] for k in keys)):
        raw = dict(cfg.params)
        raw.update(zip(keys, combo))
        try:
            runs.append(RunConfig(cfg.target, _coerce_params(cfg.target, raw, {}), cfg.out))
        except ConfigError as e:
            bad = dict(cfg.params)
            bad.update(zip(keys, combo))
            runs.append(_InvalidRun(cfg.target, bad, cfg.out, error=str(e)))
    return runs


@dataclass
class _InvalidRun(RunConfig):
    error: str = ""


# --- scenarios ---------------------------------------------------------------

def _csv(header, rows):
    lines = [",".join(header)]
    lines += [",".join(_cell(x) for x in r) for r in rows]
    return "\n".join(lines) + "\n"


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _run_bootstrap(p, seed):
    from .exponents import (BootstrapInput, as_exact, closed_form_limit, inequality_audit_o1,
                            ordering_audit, run_bootstrap)
    a, b, g = (as_exact(p[k]) for k in ("alpha", "beta", "gamma"))
    inp = BootstrapInput(a, b, g, p["max_steps"])
    trace = run_bootstrap(inp)
    limit, branch, regime = closed_form_limit(a, b)
    orderings = [ordering_audit(s.gamma_n, a, b) for s in trace.steps]
    o1 = inequality_audit_o1(a, b)
    audits = {"ordering": all(r.passed for r in orderings), "o1": o1.passed,
              "terminated": trace.terminated}
    summary = {"n0": trace.n0, "limit": str(limit), "branch": branch, "limit_regime": regime,
               "gamma_1": str(trace.gamma_1), "terminated": trace.terminated,
               "o1_margins": [str(m) for m in o1.margins]}
    return {"trace": trace.to_csv()}, summary, audits


def _run_semigroup(p, seed):
    from .decay_lab import fit_loglog_slope, linear_decay_curve
    from .spectral_core import ContinuousMeasure, audit_smoothing_bounds
    kappa, gamma = _f(p["alpha"]), _f(p["gamma"])
    a = 2 * gamma * kappa - 1          # density lam^a decays like t^-gamma
    lo, hi = p["window"]
    m = ContinuousMeasure.for_horizon(lambda lam: lam ** a, 1.0, kappa, hi)
    t = np.geomspace(lo, hi, p["samples"])
    curve = linear_decay_curve(m, kappa, t)
    fit = fit_loglog_slope(curve, (lo, hi))
    smooth = audit_smoothing_bounds(m, kappa, t)
    audits = {"slope": abs(fit.gamma - gamma) <= 0.01, "smoothing": smooth.passed}
    summary = {"density_exponent": a, "fitted": fit.gamma, "expected": gamma,
               "residual": fit.residual,
               "smoothing_ratios": {k: v for k, v in smooth.ratios.items()}}
    fit_csv = _csv(["kappa", "gamma", "fitted", "residual", "window_lo", "window_hi"],
                   [[kappa, gamma, fit.gamma, fit.residual, lo, hi]])
    return {"curve": curve.to_csv(), "fit": fit_csv}, summary, audits


def _run_simulate(p, seed):
    from .mild_solver import LedgerViolation, SolverParams, run_with_ledger
    from .solenoidal import WaveGrid, random_solenoidal
    g = WaveGrid(p["N"], _f(p["L"]))
    kw = dict(spectral_slope=p["spectral_slope"], k_cutoff=p["k_cutoff"])
    e = _f(p["energy"])
    u = random_solenoidal(g, seed, energy=e, **kw)
    B = random_solenoidal(g, seed + 1, energy=e, **kw)
    params = SolverParams(_f(p["alpha"]), _f(p["beta"]), p["n"], _f(p["dt"]), _f(p["T"]))
    try:
        led, _ = run_with_ledger(u, B, params, nonlinear=p["nonlinear"],
                                 record_every=p["record_every"])
        ok, where = True, None
    except LedgerViolation as exc:
        led, _ = run_with_ledger(u, B, params, nonlinear=p["nonlinear"],
                                 record_every=p["record_every"], check=False)
        ok, where = False, [exc.s, exc.t]
    E = led.total_energy
    summary = {"energy_initial": float(E[0]), "energy_final": float(E[-1]),
               "dissipation": led.dissipation_cum[-1], "c_led": led.c_led,
               "violation": where}
    return {"ledger": led.to_csv()}, summary, {"ledger": ok}


def _run_verify(p, seed):
    from .decay_lab import algebraic_window, audit_con1, calibrated_field, nonlinear_decay_experiment
    from .mild_solver import SolverParams
    from .solenoidal import WaveGrid
    a, b, gamma = _f(p["alpha"]), _f(p["beta"]), _f(p["gamma"])
    g = WaveGrid(p["N"], _f(p["L"]))
    win = algebraic_window(g, a, b)
    E = _f(p["amplitude"]) ** 2 * g.volume
    u = calibrated_field(g, seed, a, gamma, win, energy=E, n=p["n"])
    B = calibrated_field(g, seed + 1, b, gamma, win, energy=E, n=p["n"])
    con1 = audit_con1(u, B, a, b, gamma, np.geomspace(win[0], win[1], p["samples"]))
    params = SolverParams(a, b, p["n"], _f(p["dt"]), win[1])
    rep = nonlinear_decay_experiment(u, B, params, gamma, tolerance=_f(p["tolerance"]),
                                     samples=p["samples"])
    audits = {"decay": rep.passed, "control": rep.control_gap <= 0.01, "con1": con1.passed}
    summary = {**{k: v for k, v in rep.summary_row().items()},
               "control_fitted": rep.control.gamma, "max_norm_fitted": rep.max_norm_fit.gamma,
               "con1_constant": con1.constant, "caveat": rep.caveat}
    return ({"summary": rep.summary_csv(), "curve": rep.curve.to_csv(),
             "control": rep.control_curve.to_csv(), "ledger": rep.ledger.to_csv()},
            summary, audits)


_RUNNERS = {"bootstrap": _run_bootstrap, "semigroup-decay": _run_semigroup,
            "simulate": _run_simulate, "verify": _run_verify}


def execute(cfg: RunConfig) -> dict:
    """Run one config; never raises.  Returns the record minus the timestamp."""
    record = {"schema": SCHEMA_VERSION, "run_id": cfg.run_id, "scenario": cfg.scenario,
              "config": cfg.snapshot()}
    if isinstance(cfg, _InvalidRun):
        record.update(status="error", passed=False,
                      error={"type": "ConfigError", "message": cfg.error})
        record["result_hash"] = _digest([record["error"]])
        return record | {"_artifacts": {}}
    seed = int(cfg.params.get("seed", 0))
    try:
        artifacts, summary, audits = _RUNNERS[cfg.scenario](cfg.params, seed)
    except Exception as exc:       # isolate failures inside sweeps
        record.update(status="error", passed=False,
                      error={"type": type(exc).__name__, "message": str(exc),
                             "traceback": traceback.format_exc(limit=3)})
        record["result_hash"] = _digest([record["error"]["type"], record["error"]["message"]])
        return record | {"_artifacts": {}}
    passed = all(audits.values())
    summary = json.loads(json.dumps(summary, default=_cell))
    record.update(status="ok" if passed else "audit_failed", passed=passed,
                  audits=audits, summary=summary)
    record["result_hash"] = _digest([summary, audits, sorted(artifacts.items())])
    return record | {"_artifacts": artifacts}


# --- registry ----------------------------------------------------------------

class Registry:
    """Append-only JSON-lines log; the only writer of run artifacts."""

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.path = self.root / "registry.jsonl"

    def commit(self, result: dict) -> dict:
        result = dict(result)
        artifacts = result.pop("_artifacts", {})
        paths = []
        if artifacts:
            d = self.root / result["run_id"]
            d.mkdir(exist_ok=True)
            for name, text in artifacts.items():
                (d / f"{name}.csv").write_text(text)
                paths.append(f"{result['run_id']}/{name}.csv")
        result["artifacts"] = paths
        result["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        line = json.dumps(result, sort_keys=True, default=str)
        with open(self.path, "a") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())
            fcntl.flock(fh, fcntl.LOCK_UN)
        return result

    def records(self) -> list[dict]:
        if not self.path.exists():
            return []
        return [json.loads(ln) for ln in self.path.read_text().splitlines() if ln.strip()]


def dispatch(cfg: RunConfig, out_dir) -> dict:
    return Registry(out_dir).commit(execute(cfg))


def sweep(configs: list[RunConfig], out_dir, parallelism: int = 1) -> list[dict]:
    """Run independent configs, up to ``parallelism`` at a time.

    Workers only compute; the parent writes artifacts and registry lines in
    completion order.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be positive")
    reg = Registry(out_dir)
    if parallelism == 1 or len(configs) == 1:
        return [reg.commit(execute(c)) for c in configs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return [reg.commit(r) for r in pool.map(execute, configs)]


# --- CLI ---------------------------------------------------------------------

def _build_parser():
    ap = argparse.ArgumentParser(prog="fracmhd", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SCENARIOS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="YAML config file")
        sp.add_argument("--out", type=Path, help="output directory (default: runs)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--jobs", type=int, default=1, help="parallel runs for sweeps")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    text = args.config.read_text() if args.config else ""
    if args.set:
        extra = "\n".join(s.replace("=", ": ", 1) for s in args.set)
        text = text.rstrip("\n") + ("\n" if text.strip() else "") + extra + "\n"
    try:
        cfg = parse_config(text, args.command)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    if args.seed is not None and "seed" in cfg.params:
        cfg.params["seed"] = args.seed
    out = args.out or Path(cfg.out or "runs")
    if cfg.scenario == "sweep":
        records = sweep(expand_sweep(cfg), out, args.jobs)
    else:
        records = [dispatch(cfg, out)]
    for r in records:
        status = "PASS" if r["passed"] else ("ERROR" if r["status"] == "error" else "FAIL")
        detail = r.get("error", {}).get("message", "")
        print(f"{status} {r['run_id']} {r['scenario']} {detail}".rstrip())
    return 0 if all(r["passed"] for r in records) else 1


if __name__ == "__main__":
    sys.exit(main())
