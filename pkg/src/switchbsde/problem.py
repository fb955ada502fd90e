"""Switching problem definitions, assumption checks and the benchmark catalog.

Coefficients are vectorized over scenarios. With ``M`` paths of an
``n``-dimensional state driven by ``d`` noises, a mode argument is either a
scalar or an array of shape ``(M,)`` and

* ``b(t, prefix, a)``          returns ``(M, n)``
* ``sigma(t, prefix, a)``      returns ``(M, n, d)``
* ``f(t, prefix, a)``          returns ``(M,)``
* ``g(prefix, a)``             returns ``(M,)``
* ``c(t, prefix, a, a_new)``   returns ``(M,)``, nonnegative

Anything broadcastable to those shapes is accepted. A coefficient only
ever sees a :class:`PathPrefix`, so it cannot look into the future.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .modespace import ModeSpace

FEATURES = ("x", "running_max", "running_avg", "t")


class ProblemError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathPrefix:
    """Observed trajectory up to grid time ``times[-1]`` for a batch of paths.

    ``values`` has shape ``(M, i+1, n)``; the summaries are kept up to date
    by the simulator so coefficients need not rescan the history.
    """

    times: np.ndarray
    values: np.ndarray
    running_max: np.ndarray
    running_avg: np.ndarray

    @property
    def t(self) -> float:
        return float(self.times[-1])

    @property
    def index(self) -> int:
        return len(self.times) - 1

    @property
    def current(self) -> np.ndarray:
        return self.values[:, -1, :]

    @property
    def x(self) -> np.ndarray:
        """First state coordinate, shape ``(M,)``."""
        return self.values[:, -1, 0]

    def __len__(self) -> int:
        return self.values.shape[0]

    def take(self, idx) -> "PathPrefix":
        return PathPrefix(self.times, self.values[idx], self.running_max[idx], self.running_avg[idx])

    @classmethod
    def from_states(cls, t: float, x) -> "PathPrefix":
        """One-point prefix at time ``t``; used for Markovian coefficients."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return cls(
            times=np.array([float(t)]),
            values=x[:, None, :],
            running_max=np.linalg.norm(x, axis=1),
            running_avg=x.copy(),
        )

    @classmethod
    def from_paths(cls, times, paths) -> "PathPrefix":
        """Prefix from full histories ``paths`` of shape ``(M, k, n)``."""
        paths = np.asarray(paths, dtype=float)
        norms = np.linalg.norm(paths, axis=2)
        return cls(np.asarray(times, dtype=float), paths, norms.max(axis=1), paths.mean(axis=1))

    def features(self, names) -> np.ndarray:
        """Stack the requested path summaries into an ``(M, k)`` array."""
        cols = []
        for name in names:
            if name == "x":
                cols.append(self.current)
            elif name == "running_max":
                cols.append(self.running_max[:, None])
            elif name == "running_avg":
                cols.append(self.running_avg)
            elif name == "t":
                cols.append(np.full((len(self), 1), self.t))
            else:
                raise ProblemError(f"unknown path feature {name!r}")
        return np.concatenate(cols, axis=1)


@dataclass(frozen=True)
class SwitchingProblem:
    """A finite-horizon optimal switching problem.

    ``declared_features`` lists the path summaries the coefficients read;
    the regression solver builds its basis from them. Arbitrary path
    functionals are allowed but regression quality is then not guaranteed.
    """

    name: str
    modespace: ModeSpace
    T: float
    x0: np.ndarray
    xi0: object
    b: Callable
    sigma: Callable
    f: Callable
    g: Callable
    c: Callable
    dim_noise: int = 1
    declared_features: tuple = ("x",)
    markovian: bool = True
    growth_constants: tuple | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        object.__setattr__(self, "x0", x0)
        if not self.T > 0:
            raise ProblemError("horizon T must be positive")
        if self.dim_noise < 1:
            raise ProblemError("dim_noise must be >= 1")
        self.modespace.check(self.xi0)
        for name in self.declared_features:
            if name not in FEATURES:
                raise ProblemError(f"unknown path feature {name!r}")

    @property
    def dim_state(self) -> int:
        return self.x0.shape[0]

    # -- shape-checked coefficient evaluation -----------------------------
    def _finite(self, out, what, t, a):
        if not np.all(np.isfinite(out)):
            t0 = float(np.asarray(t, dtype=float).ravel()[0])
            raise NumericalError(f"non-finite {what} at t={t0:.6g}, mode={_mode_repr(a, out)}")
        return out

    def drift(self, t, prefix, a) -> np.ndarray:
        out = np.broadcast_to(np.asarray(self.b(t, prefix, a), dtype=float), (len(prefix), self.dim_state))
        return self._finite(out, "drift", t, a)

    def vol(self, t, prefix, a) -> np.ndarray:
        shape = (len(prefix), self.dim_state, self.dim_noise)
        out = np.broadcast_to(np.asarray(self.sigma(t, prefix, a), dtype=float), shape)
        return self._finite(out, "diffusion", t, a)

    def running(self, t, prefix, a) -> np.ndarray:
        out = np.broadcast_to(np.asarray(self.f(t, prefix, a), dtype=float), (len(prefix),))
        return self._finite(out, "running reward", t, a)

    def terminal(self, prefix, a) -> np.ndarray:
        out = np.broadcast_to(np.asarray(self.g(prefix, a), dtype=float), (len(prefix),))
        return self._finite(out, "terminal reward", prefix.t, a)

    def cost(self, t, prefix, a, a_new) -> np.ndarray:
        out = np.broadcast_to(np.asarray(self.c(t, prefix, a, a_new), dtype=float), (len(prefix),))
        return self._finite(out, "switching cost", t, a)

    def with_params(self, **kw) -> "SwitchingProblem":
        return replace(self, **kw)


def _mode_repr(a, out):
    a = np.asarray(a)
    if a.ndim == 0:
        return a.item()
    bad = ~np.all(np.isfinite(np.reshape(out, (out.shape[0], -1))), axis=1)
    return a[np.argmax(bad)].item() if a.shape[0] == out.shape[0] else a.tolist()


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    status: str
    messages: list
    lipschitz_ratio: float
    bound_at_zero: float
    growth_ratio: float
    min_cost: float
    reward_bound: float | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "messages": list(self.messages),
            "lipschitz_ratio": self.lipschitz_ratio,
            "bound_at_zero": self.bound_at_zero,
            "growth_ratio": self.growth_ratio,
            "min_cost": self.min_cost,
            "reward_bound": self.reward_bound,
        }


def _random_paths(problem, rng, n_samples, steps=8):
    n = problem.dim_state
    radius = 1.0 + 2.0 * float(np.max(np.abs(problem.x0)))
    t_end = rng.uniform(0.0, problem.T, n_samples)
    start = problem.x0[None, :] + radius * rng.uniform(-1.0, 1.0, (n_samples, n))
    incr = rng.normal(0.0, radius / np.sqrt(steps), (n_samples, steps, n))
    paths = np.concatenate([start[:, None, :], start[:, None, :] + np.cumsum(incr, axis=1)], axis=1)
    # spread magnitudes over several scales so growth in |x| is exercised
    scale = np.exp(rng.uniform(0.0, np.log(5.0), n_samples))
    return t_end, paths * scale[:, None, None]


def validate(problem: SwitchingProblem, n_samples: int = 500, rng=None,
             reward_paths: int = 200) -> ValidationReport:
    """Spot-check the structural assumptions on sampled (t, path, mode) tuples.

    Reports the largest observed Lipschitz ratio of ``b, sigma`` in the sup
    norm of the path, ``|b(0)| + |sigma(0)|``, and the growth ratio of
    ``|f| + |g| + |c|`` against ``1 + sup|x|^r``. A negative switching cost
    is a hard failure; exceeding declared ``(L, r)`` only warns since the
    checks are sampled, not proven.
    """
    if n_samples < 1:
        raise ProblemError("n_samples must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    ms = problem.modespace
    r = problem.growth_constants[1] if problem.growth_constants else 2.0
    L = problem.growth_constants[0] if problem.growth_constants else None

    t_end, paths = _random_paths(problem, rng, n_samples)
    k = paths.shape[1]
    a = ms.sample_modes(rng, n_samples)
    a2 = ms.sample_modes(rng, n_samples)
    lip = zero = growth = 0.0
    min_cost = np.inf
    for j in range(n_samples):
        times = np.linspace(0.0, t_end[j], k)
        p1 = PathPrefix.from_paths(times, paths[j:j + 1])
        delta = rng.normal(0.0, 1e-3, paths[j:j + 1].shape)
        p2 = PathPrefix.from_paths(times, paths[j:j + 1] + delta)
        p0 = PathPrefix.from_paths(times, np.zeros_like(paths[j:j + 1]))
        t = times[-1]
        db = np.abs(problem.drift(t, p1, a[j]) - problem.drift(t, p2, a[j])).sum()
        ds = np.abs(problem.vol(t, p1, a[j]) - problem.vol(t, p2, a[j])).sum()
        sup_diff = np.abs(delta).max()
        lip = max(lip, (db + ds) / sup_diff)
        zero = max(zero, np.abs(problem.drift(t, p0, a[j])).sum() + np.abs(problem.vol(t, p0, a[j])).sum())
        cost = problem.cost(t, p1, a[j], a2[j])[0]
        min_cost = min(min_cost, cost, problem.cost(t, p1, a[j], a[j])[0])
        size = np.abs(problem.running(t, p1, a[j])[0]) + np.abs(problem.terminal(p1, a[j])[0]) + abs(cost)
        sup = np.abs(paths[j]).max()
        growth = max(growth, size / (1.0 + sup ** r))

    messages, status = [], "pass"
    if min_cost < 0:
        status = "fail"
        messages.append("negative switching cost")
    if L is not None:
        for label, value in (("Lipschitz", lip), ("boundedness at zero", zero), ("growth", growth)):
            if not np.isfinite(value) or value > L:
                messages.append(f"{label} bound exceeded: observed {value:.4g} > L={L:g}")
                if status == "pass":
                    status = "warn"
    bound = None
    if reward_paths and status != "fail":
        from .strategy import empirical_reward_bound

        bound = empirical_reward_bound(problem, M=reward_paths)
    return ValidationReport(status, messages, float(lip), float(zero), float(growth), float(min_cost), bound)


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def _mean_reverting(name, theta, sigma, c_fn, f_fn, *, kappa=1.0, T=1.0, x0=0.0, xi0=0,
                    features=("x",), markovian=True, params=None):
    theta = np.asarray(theta, dtype=float)
    ms = ModeSpace.finite(list(range(len(theta))))

    def b(t, p, a):
        return (kappa * (theta[np.asarray(a, dtype=np.int64)] - p.x))[:, None]

    def sig(t, p, a):
        return np.full((len(p), 1, 1), sigma)

    def g(p, a):
        return np.zeros(len(p))

    return SwitchingProblem(
        name=name, modespace=ms, T=T, x0=np.array([x0]), xi0=xi0,
        b=b, sigma=sig, f=f_fn, g=g, c=c_fn, dim_noise=1,
        declared_features=features, markovian=markovian,
        growth_constants=(2.0 + float(np.max(np.abs(theta))) * kappa + kappa + sigma, 2.0),
        params=params or {},
    )


def _p1(kappa=1.0, theta=(0.0, 1.0), sigma=0.0, c0=0.1, target=1.0, T=1.0, x0=0.0, xi0=0):
    def f(t, p, a):
        return -(p.x - target) ** 2

    def c(t, p, a, a_new):
        return np.full(len(p), c0)

    params = dict(kappa=kappa, theta=list(theta), sigma=sigma, c0=c0, target=target, T=T, x0=x0, xi0=xi0)
    return _mean_reverting("p1-two-mode-det", theta, sigma, c, f, kappa=kappa, T=T, x0=x0, xi0=xi0,
                           params=params)


def _p2_costs(ms, c0):
    def c(t, p, a, a_new):
        return np.broadcast_to(c0 * (1.0 + ms.metric(a, a_new)), (len(p),))
    return c


def _p2(kappa=1.0, theta=(0.0, 0.5, 1.0), sigma=0.2, c0=0.05, target=1.0, T=1.0, x0=0.0, xi0=0):
    ms = ModeSpace.finite(list(range(len(theta))))

    def f(t, p, a):
        return -(p.x - target) ** 2

    params = dict(kappa=kappa, theta=list(theta), sigma=sigma, c0=c0, target=target, T=T, x0=x0, xi0=xi0)
    return _mean_reverting("p2-three-mode-diff", theta, sigma, _p2_costs(ms, c0), f, kappa=kappa, T=T,
                           x0=x0, xi0=xi0, params=params)


def _p4(kappa=1.0, theta=(0.0, 0.5, 1.0), sigma=0.2, c0=0.05, T=1.0, x0=0.0, xi0=0):
    ms = ModeSpace.finite(list(range(len(theta))))

    def f(t, p, a):
        return -p.running_max ** 2

    params = dict(kappa=kappa, theta=list(theta), sigma=sigma, c0=c0, T=T, x0=x0, xi0=xi0)
    return _mean_reverting("p4-pathdep", theta, sigma, _p2_costs(ms, c0), f, kappa=kappa, T=T,
                           x0=x0, xi0=xi0, features=("x", "running_max"), markovian=False, params=params)


def _p3(sigma=0.1, c_fixed=0.02, c_slope=0.1, T=1.0, x0=0.5, xi0=0.0, lo=-1.0, hi=1.0):
    ms = ModeSpace.interval(lo, hi, "uniform")

    def b(t, p, a):
        return np.broadcast_to(np.asarray(a, dtype=float), (len(p),))[:, None]

    def sig(t, p, a):
        return np.full((len(p), 1, 1), sigma)

    def f(t, p, a):
        return -p.x ** 2

    def g(p, a):
        return np.zeros(len(p))

    def c(t, p, a, a_new):
        return np.broadcast_to(c_fixed + c_slope * np.abs(np.asarray(a, float) - np.asarray(a_new, float)),
                               (len(p),))

    params = dict(sigma=sigma, c_fixed=c_fixed, c_slope=c_slope, T=T, x0=x0, xi0=xi0, lo=lo, hi=hi)
    bound = max(abs(lo), abs(hi))
    return SwitchingProblem(
        name="p3-continuum", modespace=ms, T=T, x0=np.array([x0]), xi0=float(xi0),
        b=b, sigma=sig, f=f, g=g, c=c, dim_noise=1, declared_features=("x",),
        markovian=True, growth_constants=(2.0 + bound + sigma + c_slope * (hi - lo), 2.0), params=params,
    )


CATALOG = {
    "p1-two-mode-det": _p1,
    "p2-three-mode-diff": _p2,
    "p3-continuum": _p3,
    "p4-pathdep": _p4,
}


def catalog(name: str, **overrides) -> SwitchingProblem:
    """Build a benchmark instance, optionally overriding its parameters."""
    try:
        build = CATALOG[name]
    except KeyError:
        raise ProblemError(f"unknown problem {name!r}; choose from {sorted(CATALOG)}") from None
    try:
        return build(**overrides)
    except TypeError as exc:
        raise ProblemError(f"bad override for {name}: {exc}") from None


def from_config(cfg) -> SwitchingProblem:
    """``"p1-two-mode-det"`` or ``{"name": ..., "overrides": {...}}``."""
    if isinstance(cfg, str):
        return catalog(cfg)
    return catalog(cfg["name"], **cfg.get("overrides", {}))


def project_problem(problem: SwitchingProblem, k: int) -> SwitchingProblem:
    """Restrict an interval-mode problem to ``{xi0} U {a_1..a_k}``.

    The result is a finite-mode problem whose mode ``j`` stands for the
    physical mode ``labels[j]``; all coefficients are the original ones
    evaluated at those labels, and the mode measure is the image of
    ``lambda`` under the nearest-label map, so ``lambda(A)`` is unchanged.
    The initial mode is kept, so the projected problem is a sub-problem of
    the original one.
    """
    ms = problem.modespace
    if ms.is_finite:
        raise ProblemError("projection applies to interval mode spaces")
    points = [float(a) for a in ms.dense_sequence(k)]
    if float(problem.xi0) not in points:
        points.append(float(problem.xi0))
    labels = np.asarray(points)
    # push lambda forward onto the labels (mass of each nearest-point cell)
    order = np.sort(labels)
    cuts = np.concatenate([[ms.lo], 0.5 * (order[1:] + order[:-1]), [ms.hi]])
    cell = {float(a): ms.mass_between(lo, hi) for a, lo, hi in zip(order, cuts[:-1], cuts[1:])}
    fin = ModeSpace.finite(points, [cell[p] for p in points])

    def lab(a):
        return labels[np.asarray(a, dtype=np.int64)]

    return SwitchingProblem(
        name=f"{problem.name}-proj{k}", modespace=fin, T=problem.T, x0=problem.x0,
        xi0=points.index(float(problem.xi0)),
        b=lambda t, p, a: problem.b(t, p, lab(a)),
        sigma=lambda t, p, a: problem.sigma(t, p, lab(a)),
        f=lambda t, p, a: problem.f(t, p, lab(a)),
        g=lambda p, a: problem.g(p, lab(a)),
        c=lambda t, p, a, a2: problem.c(t, p, lab(a), lab(a2)),
        dim_noise=problem.dim_noise, declared_features=problem.declared_features,
        markovian=problem.markovian, growth_constants=problem.growth_constants,
        params=dict(problem.params, projected_k=k),
    )
