import numpy as np
import pytest

from helpers import make_problem
from switchbsde.bsde import (RegressionBasis, PenalizedSolution, epsilon_rate, evaluate_value,
                             extract_epsilon_control, lsq_fit, solve_penalized, solve_reflected)
from switchbsde.girsanov import constant_control, estimate_randomized_reward, simulate_scenarios
from switchbsde.modespace import ModeSpace
from switchbsde.problem import PathPrefix, catalog
from switchbsde.simulate import TimeGrid
from switchbsde.strategy import empirical_reward_bound, estimate_reward, never_switch

G50 = TimeGrid(1.0, 50)
G20 = TimeGrid(1.0, 20)


# -- least squares ------------------------------------------------------------

def test_lsq_exact_linear_recovery():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 4))
    beta = np.array([1.0, -2.0, 0.5, 3.0])
    assert np.allclose(lsq_fit(X, X @ beta, ridge=0.0), beta, atol=1e-8)


def test_lsq_duplicated_column_is_finite():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(30, 1))
    X = np.hstack([np.ones((30, 1)), x, x])
    beta = lsq_fit(X, 2 + 3 * x[:, 0])
    assert np.all(np.isfinite(beta))
    assert np.allclose(X @ beta, 2 + 3 * x[:, 0], atol=1e-6)


@pytest.mark.parametrize("ridge", [0.0, 0.3])
def test_lsq_matches_normal_equations(ridge):
    rng = np.random.default_rng(2)
    X = rng.normal(size=(200, 5))
    y = rng.normal(size=200)
    ref = np.linalg.solve(X.T @ X + ridge * np.eye(5), X.T @ y)
    assert np.allclose(lsq_fit(X, y, ridge=ridge), ref, atol=1e-6)


def test_basis_size():
    assert RegressionBasis(3).size(catalog("p1-two-mode-det")) == 4
    assert RegressionBasis(2).size(catalog("p4-pathdep")) == 6
    assert RegressionBasis(3, mode_degree=4).size(catalog("p3-continuum")) == 20


def test_too_few_paths_rejected():
    with pytest.raises(ValueError, match="too small"):
        solve_penalized(catalog("p1-two-mode-det"), 1.0, G20, 30)
    with pytest.raises(ValueError):
        solve_penalized(catalog("p1-two-mode-det"), -1.0, G20, 1000)


# -- exact cases ----------------------------------------------------------------

@pytest.mark.parametrize("ms", [ModeSpace.finite([0, 1, 2]), ModeSpace.interval(-1, 1)])
@pytest.mark.parametrize("n", [0.0, 7.0, None])
def test_constant_solution(ms, n):
    xi0 = 0 if ms.is_finite else 0.0
    p = make_problem(ms, g=1.75, c=lambda t, pr, a, b: 0.1 * np.ones(len(pr)), sigma=0.3, b=0.2, xi0=xi0)
    sol = (solve_reflected(p, G20, 2000, seed=1) if n is None else solve_penalized(p, n, G20, 2000, seed=1))
    assert sol.y0 == pytest.approx(1.75, abs=1e-8)
    assert sol.violation == pytest.approx(0.0, abs=1e-8)
    pr = simulate_scenarios(p, G20, 5, 0).X.prefix(7)
    for a in ms.quadrature(5)[0]:
        assert np.allclose(evaluate_value(sol, G20.times[7], pr, a), 1.75, atol=1e-8)


def test_single_mode_reflected_equals_unpenalized_bitwise():
    p = make_problem(ModeSpace.finite([0]), sigma=0.3, b=lambda t, pr, a: -pr.x,
                     f=lambda t, pr, a: np.sin(pr.x), g=lambda pr, a: pr.x ** 2, x0=0.5)
    a = solve_reflected(p, G20, 2000, seed=3)
    b = solve_penalized(p, 0.0, G20, 2000, seed=3)
    assert a.y0 == b.y0
    for sa, sb in zip(a.surfaces, b.surfaces):
        assert np.array_equal(sa.coef, sb.coef)


def test_unpenalized_value_is_the_stay_value():
    p = catalog("p2-three-mode-diff")
    sol = solve_penalized(p, 0.0, G50, 10_000, seed=11)
    mean, se = estimate_reward(p, never_switch(), 10_000, seed=12)
    assert abs(sol.y0 - mean) <= 3 * np.hypot(se, sol.y0_stderr)


def test_prohibitive_costs_give_never_switch_value():
    base = catalog("p2-three-mode-diff")
    p = catalog("p2-three-mode-diff", c0=3 * empirical_reward_bound(base))
    sol = solve_reflected(p, G50, 10_000, seed=13)
    mean, se = estimate_reward(p, never_switch(), 10_000, seed=14)
    assert abs(sol.y0 - mean) <= 3 * np.hypot(se, sol.y0_stderr)


# -- penalization -----------------------------------------------------------------

@pytest.fixture(scope="module")
def p1_ladder():
    p = catalog("p1-two-mode-det")
    return [solve_penalized(p, n, G50, 4000, seed=5) for n in (0, 2, 10, 50)]


def test_ladder_increases_and_dissipates(p1_ladder):
    y = [s.y0 for s in p1_ladder]
    se = [s.y0_stderr for s in p1_ladder]
    for j in range(len(y) - 1):
        assert y[j + 1] >= y[j] - 2 * max(se[j], se[j + 1])
    v = [s.violation for s in p1_ladder]
    assert np.all(np.diff(v) <= 0)
    assert v[-1] <= v[0] / 5


def test_penalty_mass_identity(p1_ladder):
    for s in p1_ladder:
        assert s.penalty_mass >= 0 and s.violation >= 0
        assert s.penalty_mass == s.n * s.violation


def test_reflected_mass_nonnegative():
    s = solve_reflected(catalog("p2-three-mode-diff"), G20, 3000, seed=2)
    assert s.penalty_mass >= 0 and s.violation >= 0


def test_obstacle_consistency_at_start():
    p = catalog("p1-two-mode-det")
    sol = solve_reflected(p, G50, 10_000, seed=6)
    pr = PathPrefix.from_states(0.0, [0.0])
    v0, v1 = (evaluate_value(sol, 0.0, pr, a)[0] for a in (0, 1))
    assert v1 >= v0 - 0.1 - 1e-2
    assert v0 >= v1 - 0.1 - 1e-2


def test_terminal_readout_is_exact_and_grid_checked():
    p = catalog("p2-three-mode-diff")
    sol = solve_penalized(p, 5.0, G20, 2000, seed=1)
    pr = simulate_scenarios(p, G20, 8, 0).X.prefix(20)
    for a in range(3):
        assert np.array_equal(evaluate_value(sol, 1.0, pr, a), p.terminal(pr, a))
    with pytest.raises(ValueError):
        evaluate_value(sol, 0.123, pr, 0)


def test_interval_and_path_dependent_problems_solve():
    for name in ("p3-continuum", "p4-pathdep"):
        p = catalog(name)
        sol = solve_penalized(p, 10.0, G20, 3000, seed=2)
        never, se = estimate_reward(p, never_switch(), 3000, seed=3)
        assert np.isfinite(sol.y0) and sol.y0_stderr > 0
        assert sol.y0 >= never - 3 * np.hypot(se, sol.y0_stderr) - 0.02


def test_worker_count_does_not_change_solution():
    p = catalog("p2-three-mode-diff")
    a = solve_penalized(p, 5.0, G20, 2000, seed=4, workers=1)
    b = solve_penalized(p, 5.0, G20, 2000, seed=4, workers=4)
    assert a.summary() == b.summary()


def test_save_load_round_trip(tmp_path):
    p = catalog("p3-continuum")
    sol = solve_penalized(p, 5.0, G20, 3000, seed=9)
    sol.save(tmp_path / "s.json")
    back = PenalizedSolution.load(tmp_path / "s.json")
    pr = simulate_scenarios(p, G20, 10, 1).X.prefix(4)
    for a in (-0.9, 0.0, 0.4):
        assert np.array_equal(evaluate_value(sol, G20.times[4], pr, a), evaluate_value(back, G20.times[4], pr, a))
    assert back.summary() == sol.summary()
    sol.dump_surfaces_csv(tmp_path / "s.csv")
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 20


# -- epsilon controls -----------------------------------------------------------------

def test_epsilon_rate_branches():
    n, eps = 50.0, 0.05
    assert epsilon_rate(0.3, n, eps) == n
    assert epsilon_rate(0.0, n, eps) == n
    assert epsilon_rate(-0.5, n, eps) == eps
    assert epsilon_rate(-4.0, n, eps) == pytest.approx(eps / 4)


def test_epsilon_control_requirements():
    p = catalog("p1-two-mode-det")
    sol = solve_penalized(p, 2.0, G20, 1000, seed=0)
    with pytest.raises(ValueError):
        extract_epsilon_control(sol, 2.0)
    with pytest.raises(ValueError):
        extract_epsilon_control(solve_reflected(p, G20, 1000, seed=0), 0.1)
    nu = extract_epsilon_control(sol, 0.5)
    assert nu.bound == 2.0


def test_dual_bound_for_a_few_controls():
    p = catalog("p2-three-mode-diff")
    sol = solve_penalized(p, 10.0, G50, 10_000, seed=21)
    for v in (0.5, 3.0, 10.0):
        est = estimate_randomized_reward(p, constant_control(v), 5000, 22, method="thinning")
        assert est.mean <= sol.y0 + 3 * np.hypot(est.stderr, sol.y0_stderr)
