"""Command line entry point: ``switchbsde <command> --config cfg.json``.

Every command prints a JSON report ``{command, config, results, checks}``
and, with ``--out``, also writes it (plus any CSV tables) to that directory.
A ``meta`` block carries wall-clock data and is the only part of a report
that changes between identical runs.

Exit codes: 0 success, 1 a check failed, 2 usage or config error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import re
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from .bsde import RegressionBasis, extract_epsilon_control, PenalizedSolution, solve_penalized, solve_reflected
from .girsanov import (InadmissibleControl, constant_control, estimate_randomized_reward, simulate_scenarios,
                       two_level_control)
from .modespace import ModeSpaceError
from .oracle import dp_optimal_policy, dp_solve
from .problem import NumericalError, ProblemError, from_config, validate
from .simulate import TimeGrid
from .strategy import estimate_reward, heuristic_policies, never_switch, threshold_policy

COMMANDS = ("simulate", "evaluate", "randomized-eval", "solve", "oracle", "compare", "validate")

_POSINT = {"type": "integer", "minimum": 1}
SCHEMA = {
    "type": "object",
    "required": ["problem"],
    "additionalProperties": False,
    "properties": {
        "problem": {"oneOf": [
            {"type": "string"},
            {"type": "object", "required": ["name"], "additionalProperties": False,
             "properties": {"name": {"type": "string"}, "overrides": {"type": "object"}}},
        ]},
        "seed": {"type": "integer", "minimum": 0},
        "N": _POSINT,
        "M": {"type": "integer", "minimum": 2},
        "n": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "reflected"}]},
        "ladder": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "basis": {"type": "object", "additionalProperties": False,
                  "properties": {"degree": _POSINT, "mode_degree": _POSINT, "n_nodes": _POSINT}},
        "policy": {"type": "string"},
        "control": {"type": "string"},
        "method": {"enum": ["reweight", "thinning"]},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "n_x": {"type": "integer", "minimum": 3},
        "dump_csv": {"type": "boolean"},
        "samples": _POSINT,
    },
}

DEFAULTS = {"seed": 42, "N": 50, "M": 10000, "n": 50, "ladder": [0, 1, 2, 5, 10, 25, 50],
            "basis": {"degree": 3, "mode_degree": 6, "n_nodes": 17}, "policy": "never",
            "control": "const:1", "method": "thinning", "eps": 0.05, "n_x": 801, "dump_csv": False,
            "samples": 500}


class ConfigError(ValueError):
    pass


class Context:
    """Resolved config plus the output directory and worker count."""

    def __init__(self, config, out, workers):
        self.config, self.out, self.workers = config, out, workers
        self.problem = from_config(config["problem"])
        self.grid = TimeGrid(self.problem.T, config["N"])
        self.basis = RegressionBasis(**config["basis"])
        self.tables = {}

    @property
    def seed(self) -> int:
        return self.config["seed"]


def resolve_config(raw: dict, seed_flag: int | None) -> dict:
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at '{where}': {exc.message}") from None
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS.items()}
    for key, value in raw.items():
        if key == "basis":
            cfg["basis"].update(value)
        else:
            cfg[key] = value
    env = os.environ.get("SWITCHBSDE_SEED")
    if seed_flag is not None:
        cfg["seed"] = seed_flag
    elif env is not None:
        try:
            cfg["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"SWITCHBSDE_SEED must be an integer, got {env!r}") from None
    if cfg["seed"] < 0:
        raise ConfigError("config error at 'seed': must be >= 0")
    return cfg


# ---------------------------------------------------------------------------
# policy and control specs
# ---------------------------------------------------------------------------

def _mode_value(ms, text):
    return int(text) if ms.is_finite else float(text)


def parse_policy(spec: str, ctx: Context):
    ms = ctx.problem.modespace
    if spec == "never":
        return never_switch()
    if spec == "dp-oracle":
        return dp_optimal_policy(dp_solve(ctx.problem, ctx.config["N"], ctx.config["n_x"]))
    parts = spec.split(":")
    if parts[0] == "threshold" and len(parts) == 5:
        return threshold_policy(parts[1], float(parts[2]), _mode_value(ms, parts[3]), _mode_value(ms, parts[4]))
    raise ConfigError(f"unknown policy {spec!r}; use never, dp-oracle or threshold:<t|x>:<level>:<below>:<above>")


_RULE = re.compile(r"^\s*(a|x|t)\s*(<=|>=|<|>|==)\s*(-?[0-9.eE+-]+)\s*$")
_OPS = {"<": np.less, "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal, "==": np.equal}


def parse_rule(text: str):
    """``"a>0"``, ``"x<0.5"`` or ``"t>=0.3"`` as a control rule."""
    m = _RULE.match(text)
    if not m:
        raise ConfigError(f"cannot parse rule {text!r}; expected <a|x|t><op><number>")
    var, op, level = m.group(1), _OPS[m.group(2)], float(m.group(3))

    def rule(i, t, p, before, a):
        value = {"a": lambda: np.asarray(a, dtype=float), "x": lambda: p.x,
                 "t": lambda: np.full(len(p), float(t))}[var]()
        return op(value, level)

    return rule


def parse_control(spec: str, ctx: Context):
    kind, _, rest = spec.partition(":")
    try:
        if kind == "const":
            return constant_control(float(rest))
        if kind == "two-level":
            lo, hi, rule = rest.split(",", 2)
            return two_level_control(float(lo), float(hi), parse_rule(rule))
        if kind == "from-solution":
            path, eps = rest.rsplit(",", 1)
            return extract_epsilon_control(PenalizedSolution.load(path, ctx.problem), float(eps))
    except (TypeError, ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad control spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown control {spec!r}; use const:<v>, two-level:<lo>,<hi>,<rule> "
                      "or from-solution:<file>,<eps>")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _check(name, value, tolerance, ok):
    return {"name": name, "value": value, "tolerance": tolerance, "pass": bool(ok)}


def cmd_simulate(ctx: Context):
    M = ctx.config["M"] if "M" in ctx.raw else 5
    sc = simulate_scenarios(ctx.problem, ctx.grid, M, ctx.seed, workers=ctx.workers)
    n = ctx.problem.dim_state
    times = ctx.grid.times
    steps = np.searchsorted(times, sc.marks.times, side="left")
    rows = []
    for k in range(M):
        hit = np.zeros(len(times), dtype=int)
        np.add.at(hit, steps[k, :sc.marks.counts[k]], 1)
        for i, t in enumerate(times):
            rows.append([k, repr(float(t))] + [repr(float(v)) for v in sc.X.values[k, i]]
                        + [repr(sc.I[k, i].item()), int(hit[i])])
    ctx.tables["scenarios.csv"] = (["scenario", "t"] + [f"X{j}" for j in range(n)] + ["I", "mark"], rows)
    return {"M": M, "N": ctx.grid.N, "mark_counts": sc.N_T.tolist()}, []


def cmd_evaluate(ctx: Context):
    policy = parse_policy(ctx.config["policy"], ctx)
    mean, se = estimate_reward(ctx.problem, policy, ctx.config["M"], ctx.seed, ctx.config["N"], ctx.workers)
    return {"policy": policy.name, "mean": mean, "stderr": se, "M": ctx.config["M"], "seed": ctx.seed}, []


def cmd_randomized_eval(ctx: Context):
    nu = parse_control(ctx.config["control"], ctx)
    est = estimate_randomized_reward(ctx.problem, nu, ctx.config["M"], ctx.seed, ctx.config["N"],
                                     method=ctx.config["method"], n_nodes=ctx.basis.n_nodes, workers=ctx.workers)
    return {"control": nu.name, "method": ctx.config["method"], "mean": est.mean, "stderr": est.stderr}, []


def _solve(ctx: Context, n):
    if n == "reflected":
        return solve_reflected(ctx.problem, ctx.grid, ctx.config["M"], ctx.basis, ctx.seed, ctx.workers)
    return solve_penalized(ctx.problem, n, ctx.grid, ctx.config["M"], ctx.basis, ctx.seed, ctx.workers)


def cmd_solve(ctx: Context):
    sol = _solve(ctx, ctx.config["n"])
    ctx.meta["runtime_seconds"] = sol.runtime
    if ctx.out is not None:
        sol.save(ctx.out / "solution.json")
        if ctx.config["dump_csv"]:
            sol.dump_surfaces_csv(ctx.out / "surfaces.csv")
    checks = [_check("finite y0", sol.y0, None, np.isfinite(sol.y0))]
    return sol.summary(), checks


def cmd_oracle(ctx: Context):
    table = dp_solve(ctx.problem, ctx.config["N"], ctx.config["n_x"])
    if ctx.config["dump_csv"]:
        m = table.values.shape[1]
        rows = [[repr(float(t)), repr(float(x))] + [repr(float(table.values[i, a, j])) for a in range(m)]
                for i, t in enumerate(table.grid.times) for j, x in enumerate(table.xs)]
        ctx.tables["oracle.csv"] = (["t", "x"] + [f"v{a}" for a in range(m)], rows)
    return {"value": table.value, "N": table.grid.N, "n_x": len(table.xs)}, []


def cmd_compare(ctx: Context):
    cfg, problem = ctx.config, ctx.problem
    table = dp_solve(problem, cfg["N"], cfg["n_x"])
    dp = table.value
    refl = _solve(ctx, "reflected")
    ladder = [_solve(ctx, n) for n in cfg["ladder"]]
    top = ladder[-1]
    results = {"dp_value": dp, "reflected": refl.summary(), "ladder": [s.summary() for s in ladder]}
    ctx.tables["ladder.csv"] = (["n", "y0", "y0_stderr", "violation", "penalty_mass"],
                                [[repr(float(s.n)), repr(s.y0), repr(s.y0_stderr), repr(s.violation),
                                  repr(s.penalty_mass)] for s in ladder])
    if len(ladder) >= 2 and ladder[-1].n > ladder[-2].n:
        n1, n2 = ladder[-2].n, ladder[-1].n
        results["y0_extrapolated"] = top.y0 + (top.y0 - ladder[-2].y0) * n1 / (n2 - n1)

    rel = abs(refl.y0 - dp) / abs(dp)
    checks = [_check("reflected vs dp (relative)", rel, 0.02, rel <= 0.02)]
    rel_top = abs(top.y0 - dp) / abs(dp)
    checks.append(_check(f"penalized n={top.n:g} vs dp (relative)", rel_top, 0.02, rel_top <= 0.02))
    drops = [ladder[j].y0 - ladder[j + 1].y0 - 2 * max(ladder[j].y0_stderr, ladder[j + 1].y0_stderr)
             for j in range(len(ladder) - 1)]
    worst = max(drops, default=-np.inf)
    checks.append(_check("ladder monotone (worst drop beyond 2 stderr)", worst if drops else None, 0.0,
                         worst <= 0.0))
    ratio = top.violation / ladder[0].violation if ladder[0].violation > 0 else 0.0
    checks.append(_check("violation ratio top/first", ratio, 0.2, ratio <= 0.2))

    dp_pol = estimate_reward(problem, dp_optimal_policy(table), cfg["M"], ctx.seed + 1, cfg["N"], ctx.workers)
    results["dp_policy"] = {"mean": dp_pol[0], "stderr": dp_pol[1]}
    gap = dp_pol[0] - (refl.y0 + 3 * dp_pol[1] + 0.02)
    checks.append(_check("dp policy below reflected value", gap, 0.0, gap <= 0.0))

    if top.n > cfg["eps"]:
        nu = extract_epsilon_control(top, cfg["eps"])
        est = estimate_randomized_reward(problem, nu, cfg["M"], ctx.seed + 2, cfg["N"], method="thinning",
                                         n_nodes=ctx.basis.n_nodes, workers=ctx.workers)
        lam = problem.modespace.total_mass()
        results["eps_control"] = {"n": top.n, "eps": cfg["eps"], "mean": est.mean, "stderr": est.stderr}
        low = top.y0 - cfg["eps"] * problem.T * lam - 3 * est.stderr - 0.02
        checks.append(_check("eps-control reward lower bound", est.mean - low, 0.0, est.mean >= low))
        se = float(np.hypot(est.stderr, top.y0_stderr))
        checks.append(_check("eps-control reward upper bound", est.mean - (top.y0 + 3 * se), 0.0,
                             est.mean <= top.y0 + 3 * se))
    return results, checks


def cmd_validate(ctx: Context):
    rep = validate(ctx.problem, n_samples=ctx.config["samples"], rng=np.random.default_rng(ctx.seed))
    return rep.to_dict(), [_check("assumptions", rep.status, "pass|warn", rep.status != "fail")]


HANDLERS = {"simulate": cmd_simulate, "evaluate": cmd_evaluate, "randomized-eval": cmd_randomized_eval,
            "solve": cmd_solve, "oracle": cmd_oracle, "compare": cmd_compare, "validate": cmd_validate}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _to_builtin(obj):
    if isinstance(obj, dict):
        return {k: _to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_builtin(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def render(report: dict) -> str:
    return json.dumps(_to_builtin(report), indent=2, sort_keys=True) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="switchbsde", description="Optimal switching experiments.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="overrides SWITCHBSDE_SEED and the config")
    parser.add_argument("--workers", type=int, default=1, help="threads used for scenario generation")
    parser.add_argument("--out", default=None, help="directory for the report and CSV tables")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    started = time.perf_counter()
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        config = resolve_config(raw, args.seed)
        out = Path(args.out) if args.out else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        ctx = Context(config, out, args.workers)
        ctx.raw, ctx.meta = raw, {}
        results, checks = HANDLERS[args.command](ctx)
    except (ConfigError, ProblemError, ModeSpaceError, InadmissibleControl, jsonschema.SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    report = {"command": args.command, "config": config, "results": results, "checks": checks}
    text = render(report)
    sys.stdout.write(text)
    if out is not None:
        (out / f"{args.command}.json").write_text(text)
        for name, (header, rows) in ctx.tables.items():
            with open(out / name, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(rows)
        meta = dict(ctx.meta, wall_seconds=time.perf_counter() - started,
                    timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat())
        (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    for c in checks:
        print(f"[{'PASS' if c['pass'] else 'FAIL'}] {c['name']}: {c['value']} (tol {c['tolerance']})",
              file=sys.stderr)
    return 0 if all(c["pass"] for c in checks) else 1


def main() -> None:
    sys.exit(run())
