"""Randomized side: Poisson-driven mode processes, intensity controls and their weights.

Under the reference measure the mode process ``I`` jumps at the atoms of a
Poisson random measure with intensity ``lambda(da) dt``. An intensity
control ``nu`` changes the compensator to ``nu_t(a) lambda(da) dt``; rewards
under the changed measure are computed either by reweighting reference
scenarios with the Doleans-Dade exponential (``method="reweight"``) or by
simulating the controlled point process directly through thinning
(``method="thinning"``). Both target the same quantity.

Controls see the left grid prefix of ``X`` and the pre-jump mode, so they
are piecewise constant between grid points and marks; all time integrals
below are computed exactly for that piecewise structure.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .modespace import ModeSpace
from .problem import SwitchingProblem
from .simulate import (BrownianGrid, MarkBatch, PathBuilder, StatePath, TimeGrid,
                       brownian_batch, modes_on_grid, poisson_batch)
from .rng import stream
from .strategy import mean_stderr


class InadmissibleControl(ValueError):
    pass


class IntensityControl:
    """Bounded positive intensity field ``nu(i, t, prefix, mode_before, a)``.

    ``i`` is the grid index whose prefix is visible, ``t`` the evaluation
    time (a grid time or a mark time), ``mode_before`` the pre-jump mode
    ``I_{t-}``. Returns one value per path in ``prefix``.
    """

    def __init__(self, fn: Callable, bound: float, name: str = "custom", constant: float | None = None):
        if not bound > 0:
            raise InadmissibleControl("control bound must be positive")
        self.fn = fn
        self.bound = float(bound)
        self.name = name
        self.constant = constant

    def __call__(self, i, t, prefix, mode_before, a) -> np.ndarray:
        out = np.broadcast_to(np.asarray(self.fn(i, t, prefix, mode_before, a), dtype=float), (len(prefix),))
        if np.any(~(out > 0)) or np.any(out > self.bound):
            raise InadmissibleControl(
                f"inadmissible control {self.name!r}: values must lie in (0, {self.bound}], "
                f"got range [{out.min():.4g}, {out.max():.4g}]")
        return out

    def __repr__(self) -> str:
        return f"IntensityControl({self.name!r}, bound={self.bound})"


def constant_control(value: float) -> IntensityControl:
    value = float(value)
    return IntensityControl(lambda i, t, p, m, a: value, bound=value, name=f"const:{value}", constant=value)


def floor_control(nu: IntensityControl, eps: float) -> IntensityControl:
    """Pointwise ``max(nu, eps)``; the bound is unchanged."""
    if not 0 < eps < nu.bound:
        raise ValueError("eps must lie in (0, bound)")
    const = None if nu.constant is None else max(nu.constant, eps)

    def fn(i, t, p, m, a):
        return np.maximum(nu.fn(i, t, p, m, a), eps)

    return IntensityControl(fn, nu.bound, name=f"floor({nu.name},{eps})", constant=const)


def two_level_control(lo: float, hi: float, rule: Callable) -> IntensityControl:
    """``hi`` where ``rule(i, t, prefix, mode_before, a)`` holds, ``lo`` elsewhere."""
    return IntensityControl(lambda i, t, p, m, a: np.where(rule(i, t, p, m, a), hi, lo),
                            bound=max(lo, hi), name=f"two-level:{lo},{hi}")


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RandomizedScenario:
    """Batch of randomized scenarios: noise, marks, mode process and state.

    ``I`` holds the right-continuous mode at every grid time and ``I0`` the
    starting mode of each path.
    """

    grid: TimeGrid
    brownian: BrownianGrid
    marks: MarkBatch
    I: np.ndarray
    X: StatePath

    @property
    def M(self) -> int:
        return self.I.shape[0]

    @property
    def N_T(self) -> np.ndarray:
        return self.marks.counts

    @property
    def I0(self) -> np.ndarray:
        return self.I[:, 0]

    def take(self, idx) -> "RandomizedScenario":
        return RandomizedScenario(self.grid, self.brownian.take(idx), self.marks.take(idx), self.I[idx],
                                  self.X.take(idx))


def initial_modes(problem: SwitchingProblem, M: int, seed: int, randomize: bool) -> np.ndarray:
    ms = problem.modespace
    if not randomize:
        return np.full(M, problem.xi0, dtype=ms.dtype)
    return np.array([ms.sample_mode(stream(seed, k, "initial-mode")) for k in range(M)], dtype=ms.dtype)


def simulate_scenarios(problem: SwitchingProblem, grid: TimeGrid, M: int, seed: int,
                       randomize_initial_mode: bool = False, workers: int = 1) -> RandomizedScenario:
    """Scenarios under the reference measure (intensity ``lambda``)."""
    bw = brownian_batch(grid, problem.dim_noise, seed, M, workers=workers)
    marks = poisson_batch(problem.modespace, problem.T, seed, M, tag="poisson", workers=workers)
    I = modes_on_grid(marks, initial_modes(problem, M, seed, randomize_initial_mode), grid)
    builder = PathBuilder(problem, grid, M)
    for i in range(grid.N):
        builder.step(I[:, i], bw.increments[:, i])
    return RandomizedScenario(grid, bw, marks, I, builder.path())


def _mark_steps(marks: MarkBatch, grid: TimeGrid) -> np.ndarray:
    """Grid step of each mark: ``t_i < sigma <= t_{i+1}`` gives ``i`` (padding gives ``N``)."""
    step = np.searchsorted(grid.times, marks.times, side="left") - 1
    return np.where(np.isfinite(marks.times), step, grid.N)


def _ranks_in_step(step_of_mark: np.ndarray, i: int):
    """Yield ``(rows, slots)`` for the r-th mark of step ``i``, r = 0, 1, ..."""
    in_step = step_of_mark == i
    counts = in_step.sum(axis=1)
    if not counts.any():
        return
    first = np.argmax(in_step, axis=1)
    for r in range(int(counts.max())):
        rows = np.flatnonzero(counts > r)
        yield rows, first[rows] + r


def simulate_controlled(problem: SwitchingProblem, nu: IntensityControl, grid: TimeGrid, M: int,
                        seed: int, workers: int = 1) -> RandomizedScenario:
    """Scenarios under the controlled measure, by thinning.

    Candidates come from a Poisson measure with intensity
    ``bound * lambda(da) dt``; a candidate ``(s, a)`` is kept with
    probability ``nu_s(a) / bound``.
    """
    ms = problem.modespace
    bw = brownian_batch(grid, problem.dim_noise, seed, M, workers=workers)
    cand = poisson_batch(ms, problem.T, seed, M, tag="poisson-thin", scale=nu.bound, workers=workers)
    step_of = _mark_steps(cand, grid)
    keep = np.zeros(cand.times.shape, dtype=bool)
    mode = initial_modes(problem, M, seed, False)
    I = np.empty((M, grid.N + 1), dtype=ms.dtype)
    builder = PathBuilder(problem, grid, M)
    for i in range(grid.N):
        I[:, i] = mode
        p = builder.prefix(i)
        for rows, slots in _ranks_in_step(step_of, i):
            eta = cand.marks[rows, slots]
            rate = nu(i, cand.times[rows, slots], p.take(rows), mode[rows], eta)
            ok = cand.uniforms[rows, slots] * nu.bound < rate
            keep[rows[ok], slots[ok]] = True
            mode[rows[ok]] = eta[ok]
        builder.step(I[:, i], bw.increments[:, i])
    I[:, grid.N] = mode
    return RandomizedScenario(grid, bw, _compress(cand, keep), I, builder.path())


def _compress(batch: MarkBatch, keep: np.ndarray) -> MarkBatch:
    counts = keep.sum(axis=1)
    K = max(1, int(counts.max()) if len(counts) else 1)
    M = batch.M
    times = np.full((M, K), np.inf)
    pad = -1 if batch.marks.dtype.kind == "i" else np.nan
    marks = np.full((M, K), pad, dtype=batch.marks.dtype)
    order = np.argsort(~keep, axis=1, kind="stable")[:, :K]
    take = np.take_along_axis(keep, order, axis=1)
    times[take] = np.take_along_axis(batch.times, order, axis=1)[take]
    marks[take] = np.take_along_axis(batch.marks, order, axis=1)[take]
    return MarkBatch(times, marks, counts.astype(np.int64), np.ones((M, K)))


# ---------------------------------------------------------------------------
# pathwise functionals of a scenario
# ---------------------------------------------------------------------------

def integrate_in_time(scenario: RandomizedScenario, h: Callable) -> np.ndarray:
    """Pathwise ``int_0^T h(i(s), prefix, I_s) ds`` with ``i(s)`` the left grid index.

    ``h(i, prefix, modes)`` returns one value per path of ``prefix``. The
    integral is exact for the piecewise-constant structure: a mark inside
    step ``i`` switches the integrand for the rest of the step.
    """
    grid = scenario.grid
    step_of = _mark_steps(scenario.marks, grid)
    total = np.zeros(scenario.M)
    for i in range(grid.N):
        p = scenario.X.prefix(i)
        mode = scenario.I[:, i].copy()
        total += grid.dt * h(i, p, mode)
        t_next = grid.times[i + 1]
        for rows, slots in _ranks_in_step(step_of, i):
            eta = scenario.marks.marks[rows, slots]
            sub = p.take(rows)
            rest = t_next - scenario.marks.times[rows, slots]
            total[rows] += rest * (h(i, sub, eta) - h(i, sub, mode[rows]))
            mode[rows] = eta
    return total


def sum_over_marks(scenario: RandomizedScenario, k: Callable) -> np.ndarray:
    """Pathwise ``sum_n k(i_n, sigma_n, prefix, eta_{n-1}, eta_n)`` over the marks."""
    grid = scenario.grid
    step_of = _mark_steps(scenario.marks, grid)
    total = np.zeros(scenario.M)
    for i in range(grid.N):
        mode = scenario.I[:, i].copy()
        p = None
        for rows, slots in _ranks_in_step(step_of, i):
            p = scenario.X.prefix(i) if p is None else p
            eta = scenario.marks.marks[rows, slots]
            total[rows] += k(i, scenario.marks.times[rows, slots], p.take(rows), mode[rows], eta)
            mode[rows] = eta
    return total


def log_doleans(nu: IntensityControl, scenario: RandomizedScenario, modespace: ModeSpace,
                n_nodes: int = 17) -> np.ndarray:
    grid = scenario.grid
    if nu.constant is not None:
        v = nu.constant
        if not 0 < v <= nu.bound:
            raise InadmissibleControl(f"inadmissible control {nu.name!r}")
        return np.full(scenario.M, (1.0 - v) * modespace.total_mass() * grid.T) + scenario.N_T * np.log(v)
    nodes, weights = modespace.quadrature(n_nodes)

    def h(i, p, modes):
        acc = np.zeros(len(p))
        for a, w in zip(nodes, weights):
            acc += w * (1.0 - nu(i, grid.times[i], p, modes, a))
        return acc

    def k(i, s, p, before, eta):
        return np.log(nu(i, s, p, before, eta))

    return integrate_in_time(scenario, h) + sum_over_marks(scenario, k)


def doleans(nu: IntensityControl, scenario: RandomizedScenario, modespace: ModeSpace,
            n_nodes: int = 17) -> np.ndarray:
    """``kappa_T = exp(int int (1 - nu) lambda(da) ds) * prod_n nu(sigma_n, eta_n)`` per path."""
    return np.exp(log_doleans(nu, scenario, modespace, n_nodes))


def payoff(problem: SwitchingProblem, scenario: RandomizedScenario) -> tuple[np.ndarray, np.ndarray]:
    """``(J1, J2)`` pathwise: grid sum of ``f`` plus ``g``, and costs charged at the marks."""
    grid = scenario.grid
    j1 = np.zeros(scenario.M)
    for i in range(grid.N):
        j1 += problem.running(grid.times[i], scenario.X.prefix(i), scenario.I[:, i]) * grid.dt
    j1 += problem.terminal(scenario.X.prefix(grid.N), scenario.I[:, grid.N])

    def k(i, s, p, before, eta):
        return problem.cost(s, p, before, eta)

    return j1, sum_over_marks(scenario, k)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RandomizedEstimate:
    mean: float
    stderr: float
    samples: np.ndarray
    scenario: RandomizedScenario

    def __iter__(self):
        return iter((self.mean, self.stderr))


def estimate_randomized_reward(problem: SwitchingProblem, nu: IntensityControl, M: int, seed: int,
                               N: int = 50, method: str = "reweight", n_nodes: int = 17,
                               workers: int = 1) -> RandomizedEstimate:
    """Monte Carlo estimate of the randomized reward ``J^R(nu)``.

    ``reweight`` averages ``kappa_T * Phi`` over reference scenarios;
    ``thinning`` averages ``Phi`` over scenarios simulated under the
    controlled intensity. Unpacks as ``(mean, stderr)``.
    """
    if M < 2:
        raise ValueError("M must be >= 2")
    grid = TimeGrid(problem.T, N)
    if method == "reweight":
        sc = simulate_scenarios(problem, grid, M, seed, workers=workers)
        j1, j2 = payoff(problem, sc)
        samples = doleans(nu, sc, problem.modespace, n_nodes) * (j1 - j2)
    elif method == "thinning":
        sc = simulate_controlled(problem, nu, grid, M, seed, workers=workers)
        j1, j2 = payoff(problem, sc)
        samples = j1 - j2
    else:
        raise ValueError(f"unknown method {method!r}")
    mean, se = mean_stderr(samples)
    return RandomizedEstimate(mean, se, samples, sc)


def _marks_only_problem(modespace: ModeSpace, T: float) -> SwitchingProblem:
    xi0 = modespace.quadrature(1)[0][0] if modespace.is_finite else 0.5 * (modespace.lo + modespace.hi)
    zero = lambda *args: 0.0  # noqa: E731
    return SwitchingProblem(name="marks-only", modespace=modespace, T=T, x0=np.zeros(1), xi0=xi0,
                            b=zero, sigma=zero, f=zero, g=zero, c=zero)


def check_martingale(modespace: ModeSpace, nu: IntensityControl, T: float, M: int, seed: int,
                     N: int = 50) -> tuple[float, float]:
    """Estimate ``E[kappa_T]`` (should be 1) for a state-free control."""
    problem = _marks_only_problem(modespace, T)
    sc = simulate_scenarios(problem, TimeGrid(T, N), M, seed)
    return mean_stderr(doleans(nu, sc, modespace))


def check_cost_identity(problem: SwitchingProblem, nu: IntensityControl, M: int, seed: int,
                        N: int = 50, n_nodes: int = 101) -> tuple[float, float, float]:
    """Both sides of the randomized cost identity, reweighted by ``kappa_T``.

    ``lhs`` charges ``c`` at the marks, ``rhs`` integrates
    ``c(s, X, I_{s-}, a) nu_s(a)`` against ``lambda(da) ds``. Returns
    ``(lhs, rhs, stderr of the paired difference)``. The mode integral
    uses more nodes than the solver default because controls may jump in
    ``a``, and Gauss-Legendre converges only slowly across a jump.
    """
    grid = TimeGrid(problem.T, N)
    sc = simulate_scenarios(problem, grid, M, seed)
    kappa = doleans(nu, sc, problem.modespace, n_nodes)
    nodes, weights = problem.modespace.quadrature(n_nodes)

    def k(i, s, p, before, eta):
        return problem.cost(s, p, before, eta)

    def h(i, p, modes):
        acc = np.zeros(len(p))
        t = grid.times[i]
        for a, w in zip(nodes, weights):
            acc += w * problem.cost(t, p, modes, a) * nu(i, t, p, modes, a)
        return acc

    lhs = kappa * sum_over_marks(sc, k)
    rhs = kappa * integrate_in_time(sc, h)
    return float(lhs.mean()), float(rhs.mean()), mean_stderr(lhs - rhs)[1]
