"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are repeated in
the terminal summary) or ``python tests/test_acceptance.py``.
"""
import json
import time

import numpy as np
import pytest
from scipy import stats

from switchbsde.bsde import extract_epsilon_control, solve_penalized, solve_reflected
from switchbsde.cli import run
from switchbsde.girsanov import (IntensityControl, check_cost_identity, check_martingale, constant_control,
                                 estimate_randomized_reward)
from switchbsde.oracle import dp_optimal_policy, dp_solve
from switchbsde.problem import catalog, project_problem
from switchbsde.simulate import TimeGrid, poisson_batch
from switchbsde.strategy import estimate_reward, heuristic_policies

N, M, SEED = 50, 10_000, 42
LADDER = (0, 1, 2, 5, 10, 25, 50)
P1, P2, P3 = "p1-two-mode-det", "p2-three-mode-diff", "p3-continuum"

RESULTS = []


def report(criterion, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


_cache = {}


def cached(key, build):
    if key not in _cache:
        _cache[key] = build()
    return _cache[key]


def grid():
    return TimeGrid(1.0, N)


def dp(name):
    return cached(("dp", name), lambda: dp_solve(catalog(name), N))


def reflected(name):
    return cached(("refl", name), lambda: solve_reflected(catalog(name), grid(), M, seed=SEED))


def penalized(name, n):
    return cached(("pen", name, n), lambda: solve_penalized(catalog(name), n, grid(), M, seed=SEED))


def test_criterion_1_reflected_matches_dp():
    parts, ok = [], True
    for name in (P1, P2):
        started = time.perf_counter()
        sol = reflected(name)
        elapsed = time.perf_counter() - started
        v = dp(name).value
        rel = abs(sol.y0 - v) / abs(v)
        ok &= rel <= 0.02 and elapsed <= 60.0
        parts.append(f"{name} y0={sol.y0:.5f} dp={v:.5f} rel={rel:.4f} (<=0.02) time={elapsed:.1f}s (<=60)")
    report(1, ok, "; ".join(parts))


def test_criterion_2_penalization_ladder_is_monotone():
    sols = [penalized(P1, n) for n in LADDER]
    drops = [a.y0 - b.y0 - 2 * max(a.y0_stderr, b.y0_stderr) for a, b in zip(sols, sols[1:])]
    v = dp(P1).value
    rel = abs(sols[-1].y0 - v) / abs(v)
    ok = max(drops) <= 0.0 and rel <= 0.02
    ys = ", ".join(f"{s.y0:.4f}" for s in sols)
    report(2, ok, f"{P1} y0(n)=[{ys}] worst drop beyond 2se={max(drops):.4f} (<=0); "
                  f"y0(50) vs dp rel={rel:.4f} (<=0.02)")


def test_criterion_3_constraint_violation_dissipates():
    parts, ok = [], True
    for name in (P1, P2):
        v0, v50 = penalized(name, 0).violation, penalized(name, 50).violation
        ok &= v50 <= v0 / 5
        parts.append(f"{name} violation(50)={v50:.5f} violation(0)/5={v0 / 5:.5f}")
    report(3, ok, "; ".join(parts))


def random_control(rng, index):
    """Smooth positive control in ``(t, x, a)`` with a random bound in ``[1, 50]``."""
    bound = float(rng.uniform(1.0, 50.0))
    c = rng.normal(0.0, 1.0, size=4)

    def fn(i, t, p, before, a):
        z = c[0] + c[1] * np.asarray(a, dtype=float) + c[2] * t + c[3] * np.tanh(p.x)
        return np.clip(np.exp(z), 1e-3, bound)

    return IntensityControl(fn, bound, name=f"random-{index}")


def test_criterion_4_randomized_rewards_stay_below_penalized_value():
    problem, top = catalog(P2), penalized(P2, 50)
    rng = np.random.default_rng(2024)
    worst, failures = -np.inf, 0
    for j in range(20):
        est = estimate_randomized_reward(problem, random_control(rng, j), M, SEED + 100 + j, N, method="thinning")
        se = float(np.hypot(est.stderr, top.y0_stderr))
        gap = est.mean - (top.y0 + 3 * se)
        worst = max(worst, gap)
        failures += gap > 0
    report(4, failures == 0, f"{P2} 20 random controls, violations={failures} (0 allowed), "
                             f"worst J - (y0(50)+3se)={worst:.4f}")


def test_criterion_5_epsilon_control_recovers_value():
    problem, top, eps = catalog(P1), penalized(P1, 50), 0.05
    nu = extract_epsilon_control(top, eps)
    est = estimate_randomized_reward(problem, nu, M, SEED + 7, N, method="thinning")
    low = top.y0 - eps * problem.T * problem.modespace.total_mass() - 3 * est.stderr - 0.02
    report(5, est.mean >= low, f"{P1} J(nu_eps)={est.mean:.4f} lower bound={low:.4f}")


def test_criterion_6_policies_stay_below_reflected_value():
    parts, ok = [], True
    for name in (P1, P2):
        problem, refl = catalog(name), reflected(name)
        policies = [dp_optimal_policy(dp(name))] + heuristic_policies(problem.modespace, problem.xi0, 10)
        assert len({p.name for p in policies}) == 11
        worst = -np.inf
        for j, policy in enumerate(policies):
            mean, se = estimate_reward(problem, policy, M, SEED + 200 + j, N)
            gap = mean - (refl.y0 + 3 * float(np.hypot(se, refl.y0_stderr)) + 0.02)
            worst = max(worst, gap)
        ok &= worst <= 0.0
        parts.append(f"{name} 11 policies, worst mean - bound={worst:.4f} (<=0)")
    report(6, ok, "; ".join(parts))


def test_criterion_7_girsanov_identities():
    parts, ok = [], True
    for name in (P2, P3):
        ms = catalog(name).modespace
        for v in (0.5, 1.0, 2.0):
            mean, se = check_martingale(ms, constant_control(v), 1.0, 100_000, SEED, N=N)
            good = abs(mean - 1.0) <= 3 * se or (se == 0.0 and mean == 1.0)
            ok &= good
            parts.append(f"{name} nu={v}: E[kappa]={mean:.4f}+-{se:.4f}")
    p3 = catalog(P3)
    nu = IntensityControl(lambda i, t, pr, m, a: 1.0 + 0.5 * np.tanh(2 * a) * np.cos(3 * pr.x), 1.5, "smooth")
    lhs, rhs, se = check_cost_identity(p3, nu, M, SEED, N=N)
    ok &= abs(lhs - rhs) <= 3 * se
    parts.append(f"{P3} cost identity |lhs-rhs|={abs(lhs - rhs):.5f} 3se={3 * se:.5f}")
    report(7, ok, "; ".join(parts))


def poisson_gof(counts, mean):
    """Chi-square p-value with the upper tail pooled so expected counts are >= 5."""
    n = len(counts)
    k_max = 0
    while n * stats.poisson.sf(k_max, mean) >= 5:
        k_max += 1
    observed = np.array([np.sum(counts == k) for k in range(k_max)] + [np.sum(counts >= k_max)])
    expected = n * np.append(stats.poisson.pmf(np.arange(k_max), mean), stats.poisson.sf(k_max - 1, mean))
    return stats.chisquare(observed, expected).pvalue


def test_criterion_8_mark_counts_are_poisson():
    parts, ok = [], True
    for name in (P2, P3):
        problem = catalog(name)
        counts = poisson_batch(problem.modespace, problem.T, SEED, 10_000).counts
        pv = poisson_gof(counts, problem.modespace.total_mass() * problem.T)
        ok &= pv >= 0.01
        parts.append(f"{name} chi-square p={pv:.3f} (>=0.01)")
    report(8, ok, "; ".join(parts))


def test_criterion_9_projected_problems_bridge_to_continuum():
    problem = catalog(P3)
    cont = reflected(P3)
    values = [dp_solve(project_problem(problem, k), N).value for k in (2, 4, 8)]
    below = all(cont.y0 >= v - 3 * cont.y0_stderr - 0.02 for v in values)
    monotone = all(b >= a - 0.01 for a, b in zip(values, values[1:]))
    vs = ", ".join(f"{v:.4f}" for v in values)
    report(9, below and monotone, f"{P3} continuum y0={cont.y0:.4f}+-{cont.y0_stderr:.4f}; "
                                  f"projected dp k=2,4,8: [{vs}]")


CLI_CONFIGS = {
    "simulate": {"problem": P2, "N": 10},
    "evaluate": {"problem": P2, "N": 10, "M": 2000, "policy": "threshold:x:0.5:2:0"},
    "randomized-eval": {"problem": P2, "N": 10, "M": 2000, "control": "two-level:0.5,2,a>0"},
    "solve": {"problem": P2, "N": 10, "M": 2000, "n": "reflected"},
    "oracle": {"problem": P2, "N": 10, "n_x": 201, "dump_csv": True},
    "compare": {"problem": P1, "N": 10, "M": 2000, "ladder": [0, 50], "n_x": 201},
    "validate": {"problem": P2, "samples": 100},
}


def test_criterion_10_cli_reports_are_deterministic(tmp_path, capsys):
    differing = []
    for command, cfg in CLI_CONFIGS.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        outputs = []
        for k, workers in enumerate((1, 4, 1, 4)):
            out = tmp_path / f"{command}-{k}"
            code = run([command, "--config", str(path), "--seed", "5", "--workers", str(workers),
                        "--out", str(out)])
            assert code in (0, 1), f"{command} exited with {code}"
            outputs.append(sorted((p.name, p.read_bytes()) for p in out.iterdir() if p.name != "meta.json"))
        capsys.readouterr()
        if any(o != outputs[0] for o in outputs[1:]):
            differing.append(command)
    with capsys.disabled():
        report(10, not differing, f"{len(CLI_CONFIGS)} commands x 2 runs x workers {{1,4}}; "
                                  f"differing={differing or 'none'}")


@pytest.fixture(scope="module", autouse=True)
def _summary(request):
    yield
    if RESULTS:
        terminal = request.config.pluginmanager.get_plugin("terminalreporter")
        if terminal is not None:
            terminal.write_line("")
            terminal.write_line("acceptance summary")
            for line in RESULTS:
                terminal.write_line(line)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
