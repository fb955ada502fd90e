"""Mode sets with an intensity measure, a bounded metric and projections."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ModeSpaceError(ValueError):
    pass


def _van_der_corput(j: int) -> float:
    """Base-2 radical inverse of ``j`` (1 -> 0.5, 2 -> 0.25, 3 -> 0.75, ...)."""
    out, denom = 0.0, 1.0
    while j:
        denom *= 2.0
        out += (j & 1) / denom
        j >>= 1
    return out


@dataclass(frozen=True)
class ModeSpace:
    """A finite mode set or a real interval, carrying a finite measure.

    Finite modes are represented by their integer index ``0..m-1``; the
    ``labels`` are only carried along for reporting and for coefficient
    wrappers that need the physical value of a mode. Interval modes are
    plain floats in ``[lo, hi]``.

    Construct through :meth:`finite` or :meth:`interval`.
    """

    kind: str
    labels: tuple = ()
    weights: tuple = ()
    lo: float = 0.0
    hi: float = 0.0
    density: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    density_name: str = "uniform"
    _mass: float = 0.0
    _cdf_grid: np.ndarray | None = field(default=None, compare=False, repr=False)
    _cdf: np.ndarray | None = field(default=None, compare=False, repr=False)

    # -- construction -----------------------------------------------------
    @classmethod
    def finite(cls, labels, weights=None) -> "ModeSpace":
        labels = tuple(labels)
        if len(labels) == 0:
            raise ModeSpaceError("empty mode set")
        if weights is None:
            weights = (1.0,) * len(labels)
        weights = tuple(float(w) for w in weights)
        if len(weights) != len(labels):
            raise ModeSpaceError("modes and weights have different lengths")
        if any(not np.isfinite(w) or w <= 0.0 for w in weights):
            raise ModeSpaceError("support violation: every mode weight must be > 0")
        return cls(kind="finite", labels=labels, weights=weights, _mass=float(sum(weights)))

    @classmethod
    def interval(cls, lo: float, hi: float, density="uniform") -> "ModeSpace":
        lo, hi = float(lo), float(hi)
        if not lo < hi:
            raise ModeSpaceError("interval requires lo < hi")
        name = density if isinstance(density, str) else "custom"
        if density == "uniform":
            fn = lambda a: np.ones_like(np.asarray(a, dtype=float))  # noqa: E731
        elif isinstance(density, (int, float)):
            level = float(density)
            name = f"constant:{level}"
            fn = lambda a: np.full_like(np.asarray(a, dtype=float), level)  # noqa: E731
        elif callable(density):
            fn = density
        else:
            raise ModeSpaceError(f"unknown density {density!r}")
        # composite Gauss-Legendre on 64 panels; also tabulates the CDF
        x, w = np.polynomial.legendre.leggauss(16)
        edges = np.linspace(lo, hi, 65)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        nodes = mid[:, None] + half[:, None] * x[None, :]
        vals = np.asarray(fn(nodes), dtype=float)
        if np.any(~np.isfinite(vals)) or np.any(vals <= 0.0):
            raise ModeSpaceError("support violation: density must be > 0 on (lo, hi)")
        panel_mass = (vals * w[None, :]).sum(axis=1) * half
        cdf = np.concatenate([[0.0], np.cumsum(panel_mass)])
        mass = float(cdf[-1])
        if not np.isfinite(mass) or mass <= 0.0:
            raise ModeSpaceError("support violation: total mass must be positive and finite")
        return cls(kind="interval", lo=lo, hi=hi, density=fn, density_name=name,
                   _mass=mass, _cdf_grid=edges, _cdf=cdf / mass)

    @classmethod
    def from_config(cls, cfg: dict) -> "ModeSpace":
        kind = cfg.get("kind")
        if kind == "finite":
            return cls.finite(cfg["modes"], cfg.get("weights"))
        if kind == "interval":
            return cls.interval(cfg["lo"], cfg["hi"], cfg.get("density", "uniform"))
        raise ModeSpaceError(f"unknown mode space kind {kind!r}")

    def to_config(self) -> dict:
        if self.is_finite:
            return {"kind": "finite", "modes": list(self.labels), "weights": list(self.weights)}
        return {"kind": "interval", "lo": self.lo, "hi": self.hi, "density": self.density_name}

    # -- basic properties -------------------------------------------------
    @property
    def is_finite(self) -> bool:
        return self.kind == "finite"

    @property
    def n_modes(self) -> int:
        return len(self.labels) if self.is_finite else 0

    @property
    def dtype(self):
        return np.int64 if self.is_finite else np.float64

    def total_mass(self) -> float:
        return self._mass

    def mass_between(self, a: float, b: float) -> float:
        """``lambda([a, b])`` for an interval mode space (16-point Gauss-Legendre)."""
        if self.is_finite:
            raise ModeSpaceError("mass_between applies to interval mode spaces")
        a, b = max(float(a), self.lo), min(float(b), self.hi)
        if b <= a:
            return 0.0
        x, w = np.polynomial.legendre.leggauss(16)
        half = 0.5 * (b - a)
        return float(half * (w * np.asarray(self.density(0.5 * (a + b) + half * x), dtype=float)).sum())

    def contains(self, a) -> np.ndarray:
        a = np.asarray(a)
        if self.is_finite:
            ok = np.isfinite(a) & (a == np.round(a)) & (a >= 0) & (a < self.n_modes)
        else:
            ok = np.isfinite(a) & (a >= self.lo) & (a <= self.hi)
        return ok

    def check(self, a):
        if not np.all(self.contains(a)):
            raise ModeSpaceError(f"mode outside the mode set: {a!r}")
        return a

    def label_values(self, a) -> np.ndarray:
        """Physical value of a mode (labels for finite sets, identity otherwise)."""
        if self.is_finite:
            return np.asarray(self.labels, dtype=float)[np.asarray(a, dtype=np.int64)]
        return np.asarray(a, dtype=float)

    # -- sampling and quadrature -----------------------------------------
    def sample_modes(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` i.i.d. modes from the normalized measure."""
        if self.is_finite:
            if self.n_modes == 1:
                return np.zeros(size, dtype=np.int64)
            p = np.asarray(self.weights) / self._mass
            return rng.choice(self.n_modes, size=size, p=p).astype(np.int64)
        u = rng.random(size)
        if self.density_name == "uniform" or self.density_name.startswith("constant:"):
            return self.lo + (self.hi - self.lo) * u
        return np.interp(u, self._cdf, self._cdf_grid)

    def sample_mode(self, rng: np.random.Generator):
        return self.sample_modes(rng, 1)[0]

    def quadrature(self, n_nodes: int = 17) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights discretizing integrals against the measure.

        Finite sets return every mode with its weight (``n_nodes`` ignored);
        intervals use Gauss-Legendre nodes weighted by the density and
        rescaled so the weights add up to the total mass.
        """
        if n_nodes < 1:
            raise ModeSpaceError("n_nodes must be >= 1")
        if self.is_finite:
            return np.arange(self.n_modes, dtype=np.int64), np.asarray(self.weights, dtype=float)
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        half = 0.5 * (self.hi - self.lo)
        nodes = 0.5 * (self.hi + self.lo) + half * x
        weights = w * half * np.asarray(self.density(nodes), dtype=float)
        weights *= self._mass / weights.sum()
        return nodes, weights

    # -- metric and projections ------------------------------------------
    def metric(self, a, b) -> np.ndarray:
        """Bounded metric: ``0.5 * [a != b]`` on finite sets, ``d/(1+d)`` on intervals."""
        self.check(a)
        self.check(b)
        a, b = np.asarray(a), np.asarray(b)
        if self.is_finite:
            return np.where(a == b, 0.0, 0.5)
        d = np.abs(a.astype(float) - b.astype(float))
        return d / (1.0 + d)

    def dense_sequence(self, k: int) -> np.ndarray:
        """First ``k`` terms of the fixed dense sequence ``(a_1, a_2, ...)``.

        Intervals use ``lo, hi`` followed by the bit-reversed dyadic points
        (midpoint, quarter points, ...). Finite sets list their modes and
        are clamped to ``m`` terms.
        """
        if k < 1:
            raise ModeSpaceError("k must be >= 1")
        if self.is_finite:
            return np.arange(min(k, self.n_modes), dtype=np.int64)
        span = self.hi - self.lo
        seq = [self.lo, self.hi] + [self.lo + span * _van_der_corput(j) for j in range(1, k - 1)]
        return np.asarray(seq[:k], dtype=float)

    def project_nearest(self, b, k: int):
        """Nearest point of ``{a_1..a_k}``, ties resolved to the lowest index."""
        points = self.dense_sequence(k)
        b_arr = np.asarray(self.check(b))
        dist = self.metric(b_arr[..., None], points)
        out = points[np.argmin(dist, axis=-1)]
        return out if b_arr.ndim else out[()]
