import itertools

import numpy as np
import pytest
from scipy import integrate

from helpers import indicator_terminal, make_problem
from switchbsde.modespace import ModeSpace
from switchbsde.oracle import dp_optimal_policy, dp_solve, dp_value
from switchbsde.problem import catalog
from switchbsde.simulate import TimeGrid, brownian_batch
from switchbsde.strategy import empirical_reward_bound, estimate_reward, run_policy

# best reward over all 2^8 mode sequences of deterministic P1 at N=8 (enumerated below)
P1_N8_ENUMERATED = -0.570364220255334


def _enumerate_p1(N):
    dt, theta, best = 1.0 / N, (0.0, 1.0), -np.inf
    for seq in itertools.product((0, 1), repeat=N):
        x, prev, r = 0.0, 0, 0.0
        for m in seq:
            r -= 0.1 * (m != prev)
            prev = m
            r -= (x - 1.0) ** 2 * dt
            x += (theta[m] - x) * dt
        best = max(best, r)
    return best


def test_enumeration_oracle_is_frozen():
    assert _enumerate_p1(8) == pytest.approx(P1_N8_ENUMERATED, abs=1e-15)


def test_dp_matches_enumeration_on_p1():
    assert dp_solve(catalog("p1-two-mode-det"), 8).value == pytest.approx(P1_N8_ENUMERATED, abs=1e-5)


def test_single_mode_matches_rk4_and_simpson():
    # dx = (1 - x) dt, f = -(x - 1)^2 along the flow
    p = make_problem(ModeSpace.finite([0]), b=lambda t, pr, a: 1.0 - pr.x, f=lambda t, pr, a: -(pr.x - 1) ** 2)
    ts = np.linspace(0, 1, 2001)
    xs = [0.0]
    h = ts[1] - ts[0]
    for _ in ts[:-1]:
        x = xs[-1]
        k1 = 1 - x
        k2 = 1 - (x + h * k1 / 2)
        k3 = 1 - (x + h * k2 / 2)
        k4 = 1 - (x + h * k3)
        xs.append(x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6)
    ref = integrate.simpson(-(np.array(xs) - 1) ** 2, x=ts)
    assert dp_solve(p, 1000).value == pytest.approx(ref, abs=1e-3)


def test_constant_terminal_reward():
    p = make_problem(ModeSpace.finite([0, 1, 2]), g=0.7, c=0.3, sigma=0.4)
    assert dp_solve(p, 20).value == 0.7


def test_prohibitive_costs_reproduce_no_switch_recursion():
    base = catalog("p2-three-mode-diff")
    huge = 10 * empirical_reward_bound(base)
    p = catalog("p2-three-mode-diff", c0=huge)
    a = dp_solve(p, 30)
    b = dp_solve(p, 30, allow_switching=False)
    assert np.array_equal(a.values, b.values)


def test_self_convergence_on_p1():
    p = catalog("p1-two-mode-det")
    a = dp_solve(p, 200, 400).value
    b = dp_solve(p, 400, 800).value
    assert abs(a - b) <= 0.005 * abs(b)


def test_additive_shift_in_running_reward():
    p = catalog("p2-three-mode-diff")
    f = p.f
    shifted = p.with_params(f=lambda t, pr, a: f(t, pr, a) + 0.25)
    v0, v1 = dp_solve(p, 30).value, dp_solve(shifted, 30).value
    assert v1 - v0 == pytest.approx(0.25 * p.T, abs=1e-12)


def test_more_expensive_switching_never_helps():
    cheap = dp_solve(catalog("p2-three-mode-diff"), 30).value
    dear = dp_solve(catalog("p2-three-mode-diff", c0=0.1), 30).value
    assert cheap >= dear


@pytest.mark.parametrize("name", ["p1-two-mode-det", "p2-three-mode-diff"])
def test_table_invariants(name):
    p = catalog(name)
    tab = dp_solve(p, 50)
    m = p.modespace.n_modes
    from switchbsde.problem import PathPrefix

    for i in (0, 17, 49):
        pr = PathPrefix.from_states(tab.grid.times[i], tab.xs)
        for a in range(m):
            for b in range(m):
                if a != b:
                    assert np.all(tab.values[i, a] >= tab.values[i, b] - p.cost(tab.grid.times[i], pr, a, b) - 1e-12)
    assert np.array_equal(tab.values[-1, 0], p.terminal(PathPrefix.from_states(1.0, tab.xs), 0))
    never = dp_solve(p, 50, allow_switching=False).value
    assert tab.value >= never
    assert abs(tab.value) <= empirical_reward_bound(p) + 1e-6


def test_rejects_unsupported_problems():
    for name in ("p3-continuum", "p4-pathdep"):
        with pytest.raises(ValueError, match="oracle requires Markovian finite-mode problem"):
            dp_solve(catalog(name))


def test_value_outside_lattice_rejected():
    tab = dp_solve(catalog("p1-two-mode-det"), 10)
    with pytest.raises(ValueError):
        dp_value(tab, 0.0, tab.xs[-1] + 1.0, 0)
    with pytest.raises(ValueError):
        dp_value(tab, 0.05, 0.0, 0)


def test_single_mode_policy_never_switches():
    p = make_problem(ModeSpace.finite([0]), sigma=0.3, f=lambda t, pr, a: -pr.x ** 2)
    g = TimeGrid(1.0, 20)
    run = run_policy(p, dp_optimal_policy(dp_solve(p, 20)), brownian_batch(g, 1, 0, 100), g)
    assert not run.realization.switched.any()


def test_policy_reward_close_to_table_value():
    p = catalog("p1-two-mode-det")
    tab = dp_solve(p, 50)
    mean, se = estimate_reward(p, dp_optimal_policy(tab), 100, 0)
    assert abs(mean - tab.value) <= 3 * se + 0.02


def test_zero_cost_policy_ends_in_rewarded_mode():
    p = make_problem(ModeSpace.finite([0, 1, 2]), g=indicator_terminal(2), sigma=0.2)
    tab = dp_solve(p, 10)
    g = TimeGrid(1.0, 10)
    run = run_policy(p, dp_optimal_policy(tab), brownian_batch(g, 1, 0, 20), g)
    assert np.all(run.realization.modes[:, 9] == 2)
    assert np.all(run.realization.modes[:, :9] == 0)
