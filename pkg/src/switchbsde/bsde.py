"""Backward regression Monte Carlo for the penalized and reflected randomized BSDE.

The scheme runs on scenarios simulated under the reference measure. At
each grid step ``i`` (backwards) it regresses ``Y_{i+1}`` on path features
at ``t_i`` and the current mode ``I_{t_i}``, giving a continuation surface
``yhat_i(x, a)``. The jump field is read off that surface,
``U_i(a) = yhat_i(x, a) - yhat_i(x, I)``, and the driver is written in
compensated form:

    Y_i = yhat_i(x, I) + dt * (f + n * Q[(U - c)^+]) - h * Q[U]

with ``Q`` the quadrature against ``lambda`` and
``h = (1 - exp(-lambda(A) dt)) / lambda(A)`` the expected time-weight of a
mark inside one step (``h -> dt`` as ``dt -> 0``). The reflected variant
replaces the penalty by the obstacle ``max_a (cont(a) - c(I, a))``.

Training paths start from a mode drawn from ``lambda / lambda(A)`` so every
mode block has data at every step; the value ``y0`` is the surface read at
``(x0, xi0)``.
"""
from __future__ import annotations

import csv
import itertools
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .girsanov import IntensityControl, simulate_scenarios
from .problem import NumericalError, PathPrefix, SwitchingProblem
from .simulate import TimeGrid


def lsq_fit(design: np.ndarray, targets: np.ndarray, ridge: float | None = None) -> np.ndarray:
    """Minimize ``|design @ beta - targets|^2 + ridge * |beta|^2``.

    ``ridge=None`` uses ``1e-8`` times the mean squared column norm. The
    ridge problem is solved as an augmented least-squares system through
    an SVD, never through the normal equations.
    """
    design = np.asarray(design, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if design.ndim != 2 or design.shape[0] < 1:
        raise ValueError("design needs at least one row")
    k = design.shape[1]
    if ridge is None:
        ridge = 1e-8 * float(np.mean(np.sum(design ** 2, axis=0)))
        if ridge == 0.0:
            ridge = 1e-8
    if ridge == 0.0:
        return np.linalg.lstsq(design, targets, rcond=None)[0]
    aug = np.vstack([design, np.sqrt(ridge) * np.eye(k)])
    rhs = np.concatenate([targets, np.zeros(k)])
    return np.linalg.lstsq(aug, rhs, rcond=None)[0]


def _fit(design, targets):
    """Exact least squares, falling back to the default ridge when rank deficient."""
    beta, _, rank, _ = np.linalg.lstsq(design, targets, rcond=None)
    if rank < design.shape[1]:
        beta = lsq_fit(design, targets)
    return beta


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomials of total degree ``degree`` in the declared path features.

    Finite mode sets get one coefficient block per mode. Interval mode sets
    use the tensor product with Chebyshev polynomials of degree
    ``mode_degree`` in the rescaled mode; ``n_nodes`` Gauss-Legendre nodes
    discretize integrals and maxima over the interval.
    """

    degree: int = 3
    mode_degree: int = 6
    n_nodes: int = 17

    def size(self, problem: SwitchingProblem) -> int:
        r = sum(problem.dim_state if f in ("x", "running_avg") else 1 for f in problem.declared_features)
        k = len(_exponents(r, self.degree)) + 1
        if problem.modespace.is_finite:
            return k
        return k * (self.mode_degree + 1)


def _exponents(r, degree):
    out = []
    for d in range(1, degree + 1):
        out.extend(itertools.combinations_with_replacement(range(r), d))
    return out


class StepSurface:
    """Continuation surface ``yhat_i(features, a)`` fitted at one grid step."""

    def __init__(self, problem, basis, mu, sd, keep, coef):
        self.problem, self.basis = problem, basis
        self.mu, self.sd, self.keep = mu, sd, keep
        self.coef = coef
        self._exps = _exponents(int(keep.sum()), basis.degree)

    @classmethod
    def fit(cls, problem, basis, prefix, modes, targets):
        raw = prefix.features(problem.declared_features)
        mu = raw.mean(axis=0)
        sd = raw.std(axis=0)
        keep = sd > 1e-12 * np.maximum(1.0, np.abs(mu))
        surf = cls(problem, basis, mu, np.where(keep, sd, 1.0), keep, None)
        D = surf.path_design(prefix)
        ms = problem.modespace
        if ms.is_finite:
            pooled = _centered_fit(D, targets)
            coef = np.empty((ms.n_modes, D.shape[1]))
            blocks = []
            for a in range(ms.n_modes):
                rows = modes == a
                coef[a] = _centered_fit(D[rows], targets[rows]) if rows.sum() >= 2 else pooled
                blocks.append(rows)
        else:
            coef = _centered_fit(surf.mode_design(D, modes), targets)
        surf.coef = coef
        return surf, D

    def path_design(self, prefix: PathPrefix) -> np.ndarray:
        raw = prefix.features(self.problem.declared_features)
        z = (raw[:, self.keep] - self.mu[self.keep]) / self.sd[self.keep]
        cols = [np.ones(len(prefix))]
        for e in self._exps:
            cols.append(np.prod(z[:, list(e)], axis=1))
        return np.column_stack(cols)

    def mode_design(self, D: np.ndarray, modes) -> np.ndarray:
        ms = self.problem.modespace
        s = (2.0 * np.asarray(modes, dtype=float) - ms.lo - ms.hi) / (ms.hi - ms.lo)
        s = np.broadcast_to(s, (D.shape[0],))
        cheb = np.polynomial.chebyshev.chebvander(s, self.basis.mode_degree)
        return (D[:, :, None] * cheb[:, None, :]).reshape(D.shape[0], -1)

    def predict(self, prefix: PathPrefix, modes, D: np.ndarray | None = None) -> np.ndarray:
        D = self.path_design(prefix) if D is None else D
        if self.problem.modespace.is_finite:
            modes = np.broadcast_to(np.asarray(modes, dtype=np.int64), (D.shape[0],))
            return np.einsum("mk,mk->m", D, self.coef[modes])
        return self.mode_design(D, modes) @ self.coef

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "sd": self.sd.tolist(), "keep": self.keep.tolist(),
                "coef": np.asarray(self.coef).tolist()}

    @classmethod
    def from_dict(cls, problem, basis, d) -> "StepSurface":
        return cls(problem, basis, np.asarray(d["mu"]), np.asarray(d["sd"]), np.asarray(d["keep"], dtype=bool),
                   np.asarray(d["coef"]))


def _centered_fit(D, y):
    """Fit with the intercept handled by centering so constants are reproduced exactly."""
    if D.shape[1] == 1:
        return np.array([y.mean()])
    Dc = D[:, 1:] - D[:, 1:].mean(axis=0)
    ybar = y.mean()
    beta = _fit(Dc, y - ybar)
    return np.concatenate([[ybar - D[:, 1:].mean(axis=0) @ beta], beta])


@dataclass
class PenalizedSolution:
    """Fitted surfaces plus the value and constraint diagnostics.

    ``n`` is the penalty level, or ``None`` for the reflected (``n = inf``)
    solve. ``penalty_mass`` estimates ``E K_T``; ``violation`` estimates
    ``E int int (U - c)^+ lambda(da) dt``.
    """

    problem: SwitchingProblem
    grid: TimeGrid
    basis: RegressionBasis
    surfaces: list
    n: float | None
    y0: float
    y0_stderr: float
    penalty_mass: float
    violation: float
    M: int
    seed: int
    runtime: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def reflected(self) -> bool:
        return self.n is None

    def summary(self) -> dict:
        return {"n": "reflected" if self.reflected else self.n, "y0": self.y0, "y0_stderr": self.y0_stderr,
                "penalty_mass": self.penalty_mass, "violation": self.violation}

    def save(self, path) -> None:
        doc = {"problem": {"name": self.problem.name, "overrides": self.problem.params},
               "T": self.grid.T, "N": self.grid.N,
               "basis": {"degree": self.basis.degree, "mode_degree": self.basis.mode_degree,
                         "n_nodes": self.basis.n_nodes},
               "n": self.n, "M": self.M, "seed": self.seed, "summary": self.summary(),
               "surfaces": [s.to_dict() for s in self.surfaces]}
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path, problem: SwitchingProblem | None = None) -> "PenalizedSolution":
        from .problem import from_config

        with open(path) as fh:
            doc = json.load(fh)
        problem = from_config(doc["problem"]) if problem is None else problem
        basis = RegressionBasis(**doc["basis"])
        surfaces = [StepSurface.from_dict(problem, basis, d) for d in doc["surfaces"]]
        s = doc["summary"]
        return cls(problem, TimeGrid(doc["T"], doc["N"]), basis, surfaces, doc["n"], s["y0"], s["y0_stderr"],
                   s["penalty_mass"], s["violation"], doc["M"], doc["seed"])

    def dump_surfaces_csv(self, path) -> None:
        """One row per (grid time, mode block): ``t, mode, c0, c1, ...``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for i, s in enumerate(self.surfaces):
                t = self.grid.times[i]
                coef = np.atleast_2d(s.coef)
                labels = range(coef.shape[0]) if self.problem.modespace.is_finite else ["tensor"]
                for label, row in zip(labels, coef):
                    w.writerow([repr(float(t)), label] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# one backward step
# ---------------------------------------------------------------------------

def _jump_horizon(lam, dt):
    """Probability of at least one mark in a step, divided by ``lam``.

    The simulated mode at ``t_{i+1}`` is the last mark of the step, so it
    equals ``a'`` with probability ``(1 - exp(-lam dt)) w(a') / lam``.
    Compensating with this factor instead of ``dt`` removes an ``O(dt)``
    bias that otherwise accumulates over the grid.
    """
    lam = float(lam)
    return dt if lam <= 0.0 else -np.expm1(-lam * dt) / lam


def _step_update(yhat_I, yhat_nodes, weights, c_from_I, f_i, dt, n, pair_costs=None, self_mask=None,
                 sweeps=0):
    """Return ``(Y_i, (U - c)^+ integrated over A, obstacle push)`` for one step.

    ``yhat_nodes`` and ``c_from_I`` have shape ``(K, M)`` over the mode
    nodes. ``n=None`` selects the reflected update, which also needs the
    node-to-node costs ``pair_costs[a, a']`` of shape ``(K, K, M)``.
    """
    U = yhat_nodes - yhat_I
    QU = weights @ U
    pen = weights @ np.maximum(U - c_from_I, 0.0)
    h = _jump_horizon(weights.sum(), dt)
    if n is not None:
        return yhat_I + dt * (f_i + n * pen) - h * QU, pen, None
    lam = weights.sum()
    Qy = weights @ yhat_nodes
    cont_nodes = yhat_nodes - h * (Qy - lam * yhat_nodes)
    cont_I = yhat_I - h * QU
    w = cont_nodes
    K = len(weights)
    for _ in range(sweeps):
        reach = w[None, :, :] - pair_costs
        reach[np.arange(K), np.arange(K)] = -np.inf
        w = np.maximum(cont_nodes, reach.max(axis=1))
    jump = w - c_from_I
    if self_mask is not None:
        jump = np.where(self_mask, -np.inf, jump)
    best = np.maximum(cont_I, jump.max(axis=0)) if K else cont_I
    return best + dt * f_i, pen, best - cont_I


def _nodes_and_weights(problem, basis):
    return problem.modespace.quadrature(basis.n_nodes)


def _backward(problem, sc, n, basis):
    """One backward regression pass over the scenarios ``sc``.

    Returns ``(surfaces, y0, regression stderr, per-path violation, per-path push)``.
    """
    ms, grid = problem.modespace, sc.grid
    nodes, weights = _nodes_and_weights(problem, basis)
    sweeps = (ms.n_modes - 1) if ms.is_finite else 3
    dt, N = grid.dt, grid.N
    Y = problem.terminal(sc.X.prefix(N), sc.I[:, N]).copy()
    surfaces = [None] * N
    viol = np.zeros(sc.M)
    push = np.zeros(sc.M)
    y0 = se = None
    for i in range(N - 1, -1, -1):
        t = grid.times[i]
        p = sc.X.prefix(i)
        I = sc.I[:, i]
        targets = Y
        surf, D = StepSurface.fit(problem, basis, p, I, targets)
        surfaces[i] = surf
        parts = _step_parts(problem, surf, p, I, D, nodes, t, n is None)
        Y, pen, kick = _step_update(parts["yhat_I"], parts["yhat_nodes"], weights, parts["c_from_I"],
                                    problem.running(t, p, I), dt, n, parts.get("pairs"),
                                    parts["self_mask"], sweeps)
        if not np.all(np.isfinite(Y)):
            raise NumericalError(f"non-finite Y at step {i}")
        viol += dt * pen
        if kick is not None:
            push += kick
        if i == 0:
            y0, se = _value_at_start(problem, surf, sc, targets, nodes, weights, dt, n, sweeps)
    return surfaces, y0, se, viol, push


def replicate_seed(seed: int, r: int) -> int:
    """Seed of the ``r``-th independent replicate of a solve run with ``seed``."""
    return int(np.random.SeedSequence([int(seed), int(r), 0x5EED]).generate_state(1, dtype=np.uint64)[0])


def _solve(problem, n, grid, M, basis, seed, workers, replicates=4):
    started = time.perf_counter()
    if n is not None and n < 0:
        raise ValueError("penalty level n must be >= 0")
    if replicates < 0:
        raise ValueError("replicates must be >= 0")
    size = basis.size(problem)
    if M < 10 * size:
        raise ValueError(f"M={M} too small for a basis of size {size} (need >= {10 * size})")
    sc = simulate_scenarios(problem, grid, M, seed, randomize_initial_mode=True, workers=workers)
    surfaces, y0, reg_se, viol, push = _backward(problem, sc, n, basis)
    # Independent full-size replicates: their spread captures the error
    # accumulated over all steps, which the last-step regression covariance
    # misses. Smaller sub-batches are not used because a large basis makes
    # small-sample solves unstable and their spread would overstate the error.
    replicate_y0 = []
    for r in range(int(replicates)):
        sc_r = simulate_scenarios(problem, grid, M, replicate_seed(seed, r), randomize_initial_mode=True,
                                  workers=workers)
        replicate_y0.append(_backward(problem, sc_r, n, basis)[1])
    se = float(np.std([y0] + replicate_y0, ddof=1)) if replicate_y0 else reg_se
    violation = float(viol.mean())
    penalty_mass = float(push.mean()) if n is None else n * violation
    meta = {"regression_stderr": reg_se, "replicate_y0": replicate_y0}
    return PenalizedSolution(problem, grid, basis, surfaces, n, y0, se, penalty_mass, violation, M, seed,
                             runtime=time.perf_counter() - started, meta=meta)


def _step_parts(problem, surf, p, I, D, nodes, t, reflected):
    ms = problem.modespace
    yhat_I = surf.predict(p, I, D)
    yhat_nodes = np.stack([surf.predict(p, a, D) for a in nodes]) if len(nodes) else np.zeros((0, len(p)))
    c_from_I = np.stack([problem.cost(t, p, I, a) for a in nodes])
    self_mask = np.stack([I == a for a in nodes]) if ms.is_finite else None
    parts = {"yhat_I": yhat_I, "yhat_nodes": yhat_nodes, "c_from_I": c_from_I, "self_mask": self_mask}
    if reflected:
        parts["pairs"] = np.stack([np.stack([problem.cost(t, p, a, b) for b in nodes]) for a in nodes])
    return parts


def _value_at_start(problem, surf, sc, targets, nodes, weights, dt, n, sweeps):
    """Value and standard error at ``(x0, xi0)``.

    The standard error propagates the regression prediction covariance at
    ``t_0`` through the (piecewise linear) update by finite differences.
    """
    p0 = sc.X.prefix(0).take(slice(0, 1))
    xi0 = np.asarray([problem.xi0], dtype=problem.modespace.dtype)
    parts = _step_parts(problem, surf, p0, xi0, None, nodes, 0.0, n is None)
    f0 = problem.running(0.0, p0, xi0)

    def value(v):
        y, _, _ = _step_update(v[:1], v[1:, None], weights, parts["c_from_I"], f0, dt, n,
                               parts.get("pairs"), parts["self_mask"], sweeps)
        return float(y[0])

    v0 = np.concatenate([parts["yhat_I"], parts["yhat_nodes"][:, 0]])
    y0 = value(v0)
    h = 1e-6 * max(1.0, float(np.abs(v0).max()))
    grad = np.array([(value(v0 + h * e) - value(v0 - h * e)) / (2 * h) for e in np.eye(len(v0))])
    cov = _prediction_cov(problem, surf, sc, targets, np.concatenate([xi0, np.asarray(nodes)]))
    return y0, float(np.sqrt(max(grad @ cov @ grad, 0.0)))


def _prediction_cov(problem, surf, sc, target, modes):
    """Covariance of the fitted continuation at ``x0`` for each mode in ``modes``."""
    p = sc.X.prefix(0)
    D = surf.path_design(p)
    ms = problem.modespace
    k = len(modes)
    cov = np.zeros((k, k))
    d0 = D[:1]
    if ms.is_finite:
        for a in range(ms.n_modes):
            rows = sc.I[:, 0] == a
            resid = target[rows] - surf.predict(p.take(rows), a, D[rows])
            var = resid.var(ddof=D.shape[1]) if rows.sum() > D.shape[1] else 0.0
            g = d0 @ np.linalg.pinv(D[rows].T @ D[rows]) @ d0.T
            idx = np.flatnonzero(modes == a)
            cov[np.ix_(idx, idx)] = var * g[0, 0]
        return cov
    X = surf.mode_design(D, sc.I[:, 0])
    resid = target - X @ surf.coef
    var = resid.var(ddof=X.shape[1])
    Xe = np.vstack([surf.mode_design(d0, np.asarray([a])) for a in modes])
    return var * Xe @ np.linalg.pinv(X.T @ X) @ Xe.T


def solve_penalized(problem: SwitchingProblem, n: float, grid: TimeGrid, M: int,
                    basis: RegressionBasis | None = None, seed: int = 42, workers: int = 1,
                    replicates: int = 4) -> PenalizedSolution:
    """Solve the penalized BSDE with penalty level ``n`` by backward regression.

    ``y0`` comes from the paths drawn with ``seed``. ``y0_stderr`` is the
    standard deviation of ``y0`` over that run and ``replicates`` further
    independent runs of the same size; with ``replicates=0`` it falls back
    to the regression covariance at the first step, which ignores the
    error carried back from later steps.
    """
    return _solve(problem, float(n), grid, M, basis or RegressionBasis(), seed, workers, replicates)


def solve_reflected(problem: SwitchingProblem, grid: TimeGrid, M: int, basis: RegressionBasis | None = None,
                    seed: int = 42, workers: int = 1, replicates: int = 4) -> PenalizedSolution:
    """The ``n -> inf`` limit: obstacle ``max_a (cont(a) - c(I, a))`` at every step."""
    return _solve(problem, None, grid, M, basis or RegressionBasis(), seed, workers, replicates)


def evaluate_value(solution: PenalizedSolution, t: float, prefix: PathPrefix, mode) -> np.ndarray:
    """Read the surface at grid time ``t``; at ``T`` this is ``g`` itself."""
    i = solution.grid.index_of(t)
    if i == solution.grid.N:
        return solution.problem.terminal(prefix, mode)
    return solution.surfaces[i].predict(prefix, mode)


def epsilon_rate(x, n: float, eps: float) -> np.ndarray:
    """``n`` if ``x >= 0``, ``eps`` if ``-1 < x < 0``, ``-eps / x`` if ``x <= -1``."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x <= -1.0, x, -1.0)
    return np.where(x >= 0.0, n, np.where(x > -1.0, eps, -eps / safe))


def extract_epsilon_control(solution: PenalizedSolution, eps: float) -> IntensityControl:
    """Near-optimal intensity built from the penalized solution's jump field."""
    n = solution.n
    if n is None:
        raise ValueError("an epsilon control needs a penalized solution (finite n)")
    if not 0 < eps < n:
        raise ValueError(f"eps must lie in (0, n={n})")
    problem, grid = solution.problem, solution.grid

    def fn(i, t, prefix, before, a):
        surf = solution.surfaces[i]
        D = surf.path_design(prefix)
        t_i = grid.times[i]
        x = surf.predict(prefix, a, D) - surf.predict(prefix, before, D) - problem.cost(t_i, prefix, before, a)
        return epsilon_rate(x, n, eps)

    return IntensityControl(fn, bound=n, name=f"eps-control(n={n},eps={eps})")
