"""Small hand-built problems shared by the tests."""
import numpy as np

from switchbsde.modespace import ModeSpace
from switchbsde.problem import SwitchingProblem


def make_problem(modespace=None, *, b=0.0, sigma=0.0, f=0.0, g=0.0, c=0.0, x0=0.0, xi0=0, T=1.0,
                 name="custom", **kw):
    """Problem whose coefficients are constants or callables of ``(t, prefix, mode)``."""
    modespace = modespace or ModeSpace.finite([0, 1])

    def lift(v, nargs):
        if callable(v):
            return v
        if nargs == 2:
            return lambda p, a: np.full(len(p), float(v))
        if nargs == 4:
            return lambda t, p, a, a2: np.full(len(p), float(v))
        return lambda t, p, a: np.full(len(p), float(v))

    bf = lift(b, 3)
    sf = lift(sigma, 3)
    return SwitchingProblem(
        name=name, modespace=modespace, T=T, x0=np.array([x0]), xi0=xi0,
        b=lambda t, p, a: np.asarray(bf(t, p, a))[:, None] if np.ndim(bf(t, p, a)) == 1 else bf(t, p, a),
        sigma=lambda t, p, a: np.asarray(sf(t, p, a)).reshape(len(p), 1, 1),
        f=lift(f, 3), g=lift(g, 2), c=lift(c, 4), **kw)


def indicator_terminal(mode):
    """``g = 1`` in ``mode``, 0 elsewhere."""
    return lambda p, a: np.where(np.asarray(a) == mode, 1.0, 0.0) * np.ones(len(p))
