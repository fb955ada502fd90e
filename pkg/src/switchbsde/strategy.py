"""Feedback switching policies on the primal side and their Monte Carlo rewards."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .modespace import ModeSpace
from .problem import PathPrefix, SwitchingProblem
from .simulate import (BrownianGrid, PathBuilder, StatePath, TimeGrid, brownian_batch,
                       modes_on_grid, poisson_batch)


@dataclass(frozen=True)
class DecisionContext:
    """What a policy may look at when deciding at grid time ``t_i``."""

    i: int
    t: float
    prefix: PathPrefix
    brownian: np.ndarray
    mode: np.ndarray
    n_switches: np.ndarray


class SwitchingPolicy:
    """Adapted feedback rule: ``decide(ctx)`` returns the target mode per path.

    Returning the current mode means "stay". Policies are only queried at
    interior grid times ``t_1 .. t_{N-1}``.
    """

    def __init__(self, decide: Callable[[DecisionContext], np.ndarray],
                 max_switches: int | None = None, name: str = "custom"):
        self.decide = decide
        self.max_switches = max_switches
        self.name = name

    def __call__(self, ctx: DecisionContext) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.decide(ctx)), ctx.mode.shape)

    def __repr__(self) -> str:
        return f"SwitchingPolicy({self.name!r})"


@dataclass(frozen=True)
class StrategyRealization:
    """Per-path mode in force at each grid time and where switches happened."""

    grid: TimeGrid
    modes: np.ndarray
    switched: np.ndarray

    def events(self, k: int = 0) -> list:
        """``[(tau_n, xi_n), ...]`` for scenario ``k``."""
        idx = np.flatnonzero(self.switched[k])
        return [(float(self.grid.times[i]), self.modes[k, i].item()) for i in idx]


@dataclass(frozen=True)
class PolicyRun:
    realization: StrategyRealization
    path: StatePath
    j1: np.ndarray
    j2: np.ndarray

    @property
    def reward(self) -> np.ndarray:
        return self.j1 - self.j2


def run_policy(problem: SwitchingProblem, policy: SwitchingPolicy, brownian: BrownianGrid,
               grid: TimeGrid) -> PolicyRun:
    """Drive the Euler recursion with the policy's decisions.

    A switch decided at ``t_i`` sets the mode used from ``t_i`` on and is
    charged ``c(t_i, X, old, new)``. Targets equal to the current mode are
    no-ops and are not charged.
    """
    M, N, dt = brownian.M, grid.N, grid.dt
    ms = problem.modespace
    mode = np.full(M, problem.xi0, dtype=ms.dtype)
    n_sw = np.zeros(M, dtype=np.int64)
    modes = np.empty((M, N + 1), dtype=ms.dtype)
    switched = np.zeros((M, N + 1), dtype=bool)
    j1 = np.zeros(M)
    j2 = np.zeros(M)
    builder = PathBuilder(problem, grid, M)
    for i in range(N):
        t = grid.times[i]
        p = builder.prefix(i)
        if i >= 1:
            ctx = DecisionContext(i, t, p, brownian.increments[:, :i], mode.copy(), n_sw.copy())
            target = np.asarray(policy(ctx)).astype(ms.dtype)
            if not np.all(ms.contains(target)):
                raise ValueError(f"policy {policy.name!r} chose a mode outside the mode set")
            move = target != mode
            if policy.max_switches is not None:
                move &= n_sw < policy.max_switches
            if move.any():
                j2 += np.where(move, problem.cost(t, p, mode, target), 0.0)
                mode = np.where(move, target, mode)
                n_sw += move
                switched[:, i] = move
        modes[:, i] = mode
        j1 += problem.running(t, p, mode) * dt
        builder.step(mode, brownian.increments[:, i])
    modes[:, N] = mode
    j1 += problem.terminal(builder.prefix(N), mode)
    return PolicyRun(StrategyRealization(grid, modes, switched), builder.path(), j1, j2)


def mean_stderr(samples) -> tuple[float, float]:
    samples = np.asarray(samples, dtype=float)
    mean = float(samples.mean())
    if samples.size < 2 or np.all(samples == samples[0]):
        return mean, 0.0
    return mean, float(samples.std(ddof=1) / np.sqrt(samples.size))


def estimate_reward(problem: SwitchingProblem, policy: SwitchingPolicy, M: int, seed: int,
                    N: int = 50, workers: int = 1) -> tuple[float, float]:
    """Mean and standard error of ``J1 - J2`` over ``M`` scenarios."""
    if M < 2:
        raise ValueError("M must be >= 2")
    grid = TimeGrid(problem.T, N)
    bw = brownian_batch(grid, problem.dim_noise, seed, M, workers=workers)
    return mean_stderr(run_policy(problem, policy, bw, grid).reward)


# ---------------------------------------------------------------------------
# built-in policies and policy transforms
# ---------------------------------------------------------------------------

def never_switch() -> SwitchingPolicy:
    return SwitchingPolicy(lambda ctx: ctx.mode, max_switches=0, name="never")


def threshold_policy(var: str, level: float, below, above) -> SwitchingPolicy:
    """Use mode ``below`` while ``var < level`` and ``above`` otherwise.

    ``var`` is ``"t"`` (time) or ``"x"`` (first state coordinate).
    """
    if var not in ("t", "x"):
        raise ValueError(f"threshold variable must be 't' or 'x', got {var!r}")

    def decide(ctx):
        value = np.full(ctx.mode.shape, ctx.t) if var == "t" else ctx.prefix.x
        return np.where(value < level, below, above)

    return SwitchingPolicy(decide, name=f"threshold:{var}:{level}:{below}:{above}")


def truncate_policy(policy: SwitchingPolicy, N: int) -> SwitchingPolicy:
    """Same decisions until ``N`` switches have happened, then stay forever."""
    if N < 0:
        raise ValueError("N must be >= 0")
    cap = N if policy.max_switches is None else min(N, policy.max_switches)

    def decide(ctx):
        return np.where(ctx.n_switches < N, policy(ctx), ctx.mode)

    return SwitchingPolicy(decide, max_switches=cap, name=f"{policy.name}|trunc{N}")


def project_policy_modes(policy: SwitchingPolicy, k: int, modespace: ModeSpace) -> SwitchingPolicy:
    """Replace every switch target ``a`` by its projection on ``{a_1..a_k}``."""
    if k < 1:
        raise ValueError("k must be >= 1")

    def decide(ctx):
        target = np.asarray(policy(ctx))
        moved = target != ctx.mode
        if not moved.any():
            return ctx.mode
        return np.where(moved, modespace.project_nearest(target, k), ctx.mode)

    return SwitchingPolicy(decide, max_switches=policy.max_switches, name=f"{policy.name}|proj{k}")


def mode_path_distance(r1: StrategyRealization, r2: StrategyRealization,
                       modespace: ModeSpace) -> tuple[float, float]:
    """MC estimate of ``E int_0^T rho(alpha1_t, alpha2_t) dt`` on shared scenarios."""
    grid = r1.grid
    rho = modespace.metric(r1.modes[:, :-1], r2.modes[:, :-1])
    return mean_stderr(rho.sum(axis=1) * grid.dt)


def empirical_reward_bound(problem: SwitchingProblem, M: int = 200, N: int = 50, seed: int = 0) -> float:
    """Largest pathwise ``|J1|`` seen over constant-mode and Poisson-driven mode paths.

    Serves as the empirical stand-in for the a priori bound on the value.
    """
    grid = TimeGrid(problem.T, N)
    ms = problem.modespace
    bw = brownian_batch(grid, problem.dim_noise, seed, M, tag="bound-brownian")
    candidates = ms.quadrature()[0] if ms.is_finite else ms.dense_sequence(9)
    mode_tables = [np.full((M, N + 1), a, dtype=ms.dtype) for a in candidates]
    marks = poisson_batch(ms, problem.T, seed, M, tag="bound-poisson")
    mode_tables.append(modes_on_grid(marks, problem.xi0, grid))
    best = 0.0
    for table in mode_tables:
        builder = PathBuilder(problem, grid, M)
        j1 = np.zeros(M)
        for i in range(N):
            p = builder.prefix(i)
            j1 += problem.running(grid.times[i], p, table[:, i]) * grid.dt
            builder.step(table[:, i], bw.increments[:, i])
        j1 += problem.terminal(builder.prefix(N), table[:, N])
        best = max(best, float(np.abs(j1).max()))
    return best


def heuristic_policies(modespace: ModeSpace, xi0, count: int = 10) -> list:
    """A fixed, deterministic family of simple rules for dominance checks.

    Starts with :func:`never_switch`, then alternates time-threshold moves
    from ``xi0`` and state-threshold rules between pairs of modes.
    """
    modes = list(modespace.quadrature()[0]) if modespace.is_finite else list(modespace.dense_sequence(5))
    others = [a for a in modes if a != xi0]
    by_time = [threshold_policy("t", level, xi0, a) for level in (0.0, 0.2, 0.4, 0.6) for a in others]
    by_state = [threshold_policy("x", level, hi, lo) for level in (0.2, 0.4, 0.6, 0.8, 0.95)
                for lo, hi in itertools.combinations(modes, 2)]
    mixed = [pol for pair in itertools.zip_longest(by_time, by_state) for pol in pair if pol is not None]
    return ([never_switch()] + mixed)[:count]
