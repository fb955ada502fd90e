"""Dynamic programming on a state lattice for one-dimensional Markovian problems.

The recursion mirrors the Euler scheme used everywhere else: on
``[t_i, t_{i+1})`` the state moves to ``x + b dt + sigma dW`` and the
expectation over ``dW`` uses 5-point Gauss-Hermite quadrature with linear
interpolation between lattice points. The result is an independent
reference value for the regression solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import PathPrefix, SwitchingProblem
from .simulate import TimeGrid
from .strategy import SwitchingPolicy

_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(5)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


@dataclass(frozen=True)
class DPTable:
    """Values ``v[i, a, j]`` and continuations ``cont[i, a, j]`` on lattice ``xs``."""

    problem: SwitchingProblem
    grid: TimeGrid
    xs: np.ndarray
    values: np.ndarray
    cont: np.ndarray

    @property
    def value(self) -> float:
        """Value at ``(0, x0, xi0)``."""
        return float(dp_value(self, 0.0, self.problem.x0[0], self.problem.xi0))


def _check(problem):
    if (not problem.modespace.is_finite or not problem.markovian or problem.dim_state != 1
            or tuple(problem.declared_features) != ("x",)):
        raise ValueError("oracle requires Markovian finite-mode problem")


def _lattice(problem, grid, n_x):
    """Cover every constant-mode Euler flow from ``x0`` plus six noise widths."""
    m = problem.modespace.n_modes
    x = np.full(m, float(problem.x0[0]))
    modes = np.arange(m)
    lo, hi = x.min(), x.max()
    sig = 0.0
    for i in range(grid.N):
        t = grid.times[i]
        p = PathPrefix.from_states(t, x[:, None])
        sig = max(sig, float(np.abs(problem.vol(t, p, modes)).max()))
        x = x + problem.drift(t, p, modes)[:, 0] * grid.dt
        lo, hi = min(lo, x.min()), max(hi, x.max())
    pad = 6.0 * sig * np.sqrt(problem.T) + 0.1 * max(1.0, hi - lo)
    return np.linspace(lo - pad, hi + pad, n_x)


def dp_solve(problem: SwitchingProblem, N: int = 50, n_x: int = 801, xs=None,
             allow_switching: bool = True) -> DPTable:
    """Backward induction with the obstacle ``max_{a'} v(a') - c(a, a')`` at every grid time.

    ``xs`` overrides the automatic lattice. With ``allow_switching=False``
    the obstacle step is skipped, which gives the never-switch values.
    """
    _check(problem)
    grid = TimeGrid(problem.T, N)
    m = problem.modespace.n_modes
    xs = _lattice(problem, grid, n_x) if xs is None else np.asarray(xs, dtype=float)
    if xs.ndim != 1 or len(xs) < 2 or np.any(np.diff(xs) <= 0):
        raise ValueError("state lattice must be strictly increasing with at least 2 nodes")
    J = len(xs)
    values = np.empty((N + 1, m, J))
    cont = np.empty((N, m, J))
    pN = PathPrefix.from_states(problem.T, xs[:, None])
    for a in range(m):
        values[N, a] = problem.terminal(pN, a)
    dt = grid.dt
    for i in range(N - 1, -1, -1):
        t = grid.times[i]
        p = PathPrefix.from_states(t, xs[:, None])
        for a in range(m):
            mean = xs + problem.drift(t, p, a)[:, 0] * dt
            sd = problem.vol(t, p, a)[:, 0, 0] * np.sqrt(dt)
            # centre value plus weighted differences: constants pass through exactly
            centre = np.interp(mean, xs, values[i + 1, a])
            ev = centre + sum(w * (np.interp(mean + sd * z, xs, values[i + 1, a]) - centre)
                              for z, w in zip(_GH_NODES, _GH_WEIGHTS))
            cont[i, a] = problem.running(t, p, a) * dt + ev
        costs = np.array([[problem.cost(t, p, a, b) for b in range(m)] for a in range(m)])
        w = cont[i].copy()
        for _ in range(m - 1 if allow_switching else 0):
            reach = w[None, :, :] - costs
            reach[np.arange(m), np.arange(m)] = -np.inf
            w = np.maximum(cont[i], reach.max(axis=1))
        values[i] = w
    return DPTable(problem, grid, xs, values, cont)


def dp_value(table: DPTable, t: float, x, a) -> np.ndarray:
    """Interpolated value at grid time ``t``, state ``x`` and mode ``a``."""
    i = table.grid.index_of(t)
    x = np.asarray(x, dtype=float)
    if np.any(x < table.xs[0]) or np.any(x > table.xs[-1]):
        raise ValueError("state outside the oracle lattice")
    a = np.broadcast_to(np.asarray(a, dtype=np.int64), x.shape)
    out = np.empty(x.shape)
    for mode in np.unique(a):
        sel = a == mode
        out[sel] = np.interp(x[sel], table.xs, table.values[i, mode])
    return out if out.ndim else out[()]


def dp_optimal_policy(table: DPTable) -> SwitchingPolicy:
    """Switch to the best target when it beats staying by more than ``1e-12``.

    Targets are ranked by ``cont(b) - c(a, b)``, the value of switching once
    and then holding ``b`` over the step; one switch per grid time is what
    the forward simulation executes.
    """
    problem = table.problem
    m = problem.modespace.n_modes

    def decide(ctx):
        i, x, mode = ctx.i, ctx.prefix.x, ctx.mode
        stay = np.empty(x.shape)
        for a in range(m):
            sel = mode == a
            stay[sel] = np.interp(x[sel], table.xs, table.cont[i, a])
        best = stay.copy()
        target = mode.copy()
        for b in range(m):
            gain = np.interp(x, table.xs, table.cont[i, b]) - problem.cost(ctx.t, ctx.prefix, mode, b)
            better = (b != mode) & (gain > best + 1e-12)
            best = np.where(better, gain, best)
            target = np.where(better, b, target)
        return target

    return SwitchingPolicy(decide, name="dp-oracle")
