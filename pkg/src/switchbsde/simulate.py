"""Brownian grids, Poisson marked point processes, mode processes and Euler paths.

Scenario-level randomness always comes from :func:`switchbsde.rng.stream`
so any batch can be regenerated path by path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .modespace import ModeSpace
from .problem import NumericalError, PathPrefix, SwitchingProblem
from .rng import for_each_scenario, stream


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("time grid needs N >= 1 steps")
        if not self.T > 0:
            raise ValueError("time grid needs T > 0")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.T / self.N

    def index_of(self, t: float) -> int:
        i = int(round(t / self.dt))
        if i < 0 or i > self.N or not np.isclose(self.times[i], t, rtol=0, atol=1e-12 * max(1.0, self.T)):
            raise ValueError(f"time {t} is not on the grid")
        return i


@dataclass(frozen=True)
class BrownianGrid:
    """Increments ``dW`` of shape ``(M, N, d)``."""

    increments: np.ndarray

    @property
    def M(self) -> int:
        return self.increments.shape[0]

    def scenario(self, k: int) -> "BrownianGrid":
        return BrownianGrid(self.increments[k:k + 1])

    def take(self, idx) -> "BrownianGrid":
        return BrownianGrid(self.increments[idx])


def sample_brownian(grid: TimeGrid, d: int, rng: np.random.Generator) -> np.ndarray:
    """Increments for one scenario, shape ``(N, d)``."""
    return rng.normal(0.0, np.sqrt(grid.dt), size=(grid.N, d))


def brownian_batch(grid: TimeGrid, d: int, seed: int, M: int, tag: str = "brownian",
                   workers: int = 1) -> BrownianGrid:
    out = np.empty((M, grid.N, d))

    def fill(lo, hi):
        for k in range(lo, hi):
            out[k] = sample_brownian(grid, d, stream(seed, k, tag))

    for_each_scenario(M, fill, workers)
    return BrownianGrid(out)


# ---------------------------------------------------------------------------
# marked point processes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarkedPointProcess:
    """Sorted marks ``(times[j], marks[j])`` with times in ``(0, T)``."""

    times: np.ndarray
    marks: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


def _clip_open(times, T):
    times = np.where(times <= 0.0, np.nextafter(0.0, 1.0), times)
    return np.where(times >= T, T * (1.0 - 1e-12), times)


def sample_poisson_measure(modespace: ModeSpace, T: float, rng: np.random.Generator,
                           scale: float = 1.0) -> MarkedPointProcess:
    """Poisson random measure with intensity ``scale * lambda(da) dt`` on ``(0, T] x A``.

    The count is Poisson(``scale * lambda(A) * T``); given the count, times
    are uniform order statistics and marks are i.i.d. from the normalized
    measure.
    """
    k = rng.poisson(scale * modespace.total_mass() * T)
    times = _clip_open(np.sort(rng.uniform(0.0, T, k)), T)
    marks = modespace.sample_modes(rng, k)
    return MarkedPointProcess(times, marks)


@dataclass(frozen=True)
class MarkBatch:
    """Padded batch of marked point processes.

    ``times`` is ``(M, K)`` padded with ``inf``; ``marks`` is padded with
    ``-1`` (finite modes) or ``nan``; ``uniforms`` holds one acceptance
    draw per mark, used when the batch is thinned.
    """

    times: np.ndarray
    marks: np.ndarray
    counts: np.ndarray
    uniforms: np.ndarray

    @property
    def M(self) -> int:
        return self.times.shape[0]

    def scenario(self, k: int) -> MarkedPointProcess:
        n = self.counts[k]
        return MarkedPointProcess(self.times[k, :n].copy(), self.marks[k, :n].copy())

    def take(self, idx) -> "MarkBatch":
        return MarkBatch(self.times[idx], self.marks[idx], self.counts[idx], self.uniforms[idx])


def poisson_batch(modespace: ModeSpace, T: float, seed: int, M: int, tag: str = "poisson",
                  scale: float = 1.0, workers: int = 1) -> MarkBatch:
    procs: list = [None] * M
    unif: list = [None] * M

    def fill(lo, hi):
        for k in range(lo, hi):
            rng = stream(seed, k, tag)
            procs[k] = sample_poisson_measure(modespace, T, rng, scale)
            unif[k] = rng.random(len(procs[k]))

    for_each_scenario(M, fill, workers)
    counts = np.array([len(p) for p in procs], dtype=np.int64)
    K = max(1, int(counts.max()) if M else 1)
    times = np.full((M, K), np.inf)
    pad = -1 if modespace.is_finite else np.nan
    marks = np.full((M, K), pad, dtype=modespace.dtype)
    uniforms = np.ones((M, K))
    for k, (p, u) in enumerate(zip(procs, unif)):
        n = len(p)
        times[k, :n] = p.times
        marks[k, :n] = p.marks
        uniforms[k, :n] = u
    return MarkBatch(times, marks, counts, uniforms)


# ---------------------------------------------------------------------------
# mode processes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModePath:
    """Right-continuous piecewise-constant mode path started at ``xi0``."""

    jump_times: np.ndarray
    modes: np.ndarray
    xi0: object

    def _value(self, t, left):
        t = np.asarray(t, dtype=float)
        n = np.searchsorted(self.jump_times, t, side="left" if left else "right")
        table = np.concatenate([np.asarray([self.xi0], dtype=np.asarray(self.modes).dtype
                                           if len(self.modes) else type(self.xi0)), self.modes])
        out = table[n]
        return out if out.ndim else out[()]

    def __call__(self, t):
        return self._value(t, left=False)

    def left(self, t):
        """Left limit ``I_{t-}``."""
        return self._value(t, left=True)


def mode_process(mpp: MarkedPointProcess, xi0) -> ModePath:
    return ModePath(np.asarray(mpp.times, dtype=float), np.asarray(mpp.marks), xi0)


def modes_on_grid(batch: MarkBatch, xi0, grid: TimeGrid) -> np.ndarray:
    """Right-continuous mode values at every grid time, shape ``(M, N+1)``.

    ``xi0`` may be a scalar or a per-scenario array.
    """
    M = batch.M
    start = np.broadcast_to(np.asarray(xi0, dtype=batch.marks.dtype), (M,))
    table = np.concatenate([start[:, None], batch.marks], axis=1)
    n_before = (batch.times[:, :, None] <= grid.times[None, None, :]).sum(axis=1)
    return np.take_along_axis(table, n_before, axis=1)


# ---------------------------------------------------------------------------
# Euler-Maruyama
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StatePath:
    """Grid values ``(M, N+1, n)`` with running summaries for prefix access."""

    grid: TimeGrid
    values: np.ndarray
    running_max: np.ndarray
    running_avg: np.ndarray

    @property
    def M(self) -> int:
        return self.values.shape[0]

    def prefix(self, i: int) -> PathPrefix:
        return PathPrefix(self.grid.times[:i + 1], self.values[:, :i + 1],
                          self.running_max[:, i], self.running_avg[:, i])

    def take(self, idx) -> "StatePath":
        return StatePath(self.grid, self.values[idx], self.running_max[idx], self.running_avg[idx])


class PathBuilder:
    """Step-by-step Euler recursion shared by every simulator in the package.

    The mode passed to :meth:`step` is the one in force on ``[t_i, t_{i+1})``
    and coefficients are evaluated on the left grid prefix.
    """

    def __init__(self, problem: SwitchingProblem, grid: TimeGrid, M: int):
        n = problem.dim_state
        self.problem, self.grid, self.M = problem, grid, M
        self.values = np.empty((M, grid.N + 1, n))
        self.values[:, 0] = problem.x0
        self.running_max = np.empty((M, grid.N + 1))
        self.running_max[:, 0] = np.linalg.norm(problem.x0)
        self.running_avg = np.empty((M, grid.N + 1, n))
        self.running_avg[:, 0] = problem.x0
        self.i = 0

    def prefix(self, i: int | None = None) -> PathPrefix:
        i = self.i if i is None else i
        return PathPrefix(self.grid.times[:i + 1], self.values[:, :i + 1],
                          self.running_max[:, i], self.running_avg[:, i])

    def step(self, mode, dW: np.ndarray) -> None:
        i = self.i
        if i >= self.grid.N:
            raise IndexError("path already complete")
        t, dt = self.grid.times[i], self.grid.dt
        p = self.prefix(i)
        drift = self.problem.drift(t, p, mode)
        vol = self.problem.vol(t, p, mode)
        x = p.current + drift * dt + np.einsum("mnd,md->mn", vol, dW)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite state at t={t:.6g}")
        self.values[:, i + 1] = x
        self.running_max[:, i + 1] = np.maximum(self.running_max[:, i], np.linalg.norm(x, axis=1))
        self.running_avg[:, i + 1] = self.running_avg[:, i] + (x - self.running_avg[:, i]) / (i + 2)
        self.i = i + 1

    def path(self) -> StatePath:
        return StatePath(self.grid, self.values, self.running_max, self.running_avg)


def euler_path(problem: SwitchingProblem, mode_path, brownian: BrownianGrid, grid: TimeGrid) -> StatePath:
    """Euler-Maruyama path(s) for a given mode path.

    ``mode_path`` is a :class:`ModePath` (same mode path for every scenario)
    or an array of grid mode values of shape ``(M, N+1)``; the value at
    ``t_i`` drives step ``i``.
    """
    M = brownian.M
    if brownian.increments.shape[1] != grid.N:
        raise ValueError("Brownian increments do not match the grid")
    if isinstance(mode_path, ModePath):
        modes = np.broadcast_to(np.asarray(mode_path(grid.times)), (M, grid.N + 1))
    else:
        modes = np.asarray(mode_path)
    builder = PathBuilder(problem, grid, M)
    for i in range(grid.N):
        builder.step(modes[:, i], brownian.increments[:, i])
    return builder.path()
