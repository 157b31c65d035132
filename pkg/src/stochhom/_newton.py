"""Damped Newton iteration with Armijo backtracking for convex energies."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def damped_newton(fun, grad, hess, x0, stop, max_iter=100, armijo=1e-4,
                  backtrack=0.5, min_step=1e-10, merit="energy"):
    """Minimize ``fun`` (or zero ``grad`` when ``merit="residual"``).

    ``stop(x)`` returns ``(done, value)`` and is checked before every step;
    ``value`` (typically a duality gap) is recorded in ``history``. When the
    Newton direction is unusable the step falls back to steepest descent.
    """
    x = np.array(x0, dtype=float, copy=True)
    history = []
    for it in range(max_iter + 1):
        done, value = stop(x)
        history.append(value)
        if done:
            return NewtonResult(x, it, True, history)
        if it == max_iter:
            break
        g = grad(x)
        H = hess(x)
        try:
            d = -spla.spsolve(H.tocsc(), g)
        except RuntimeError:
            d = np.full_like(g, np.nan)
        if merit == "energy":
            slope = float(g @ d)
            if not np.all(np.isfinite(d)) or slope >= 0:
                d, slope = -g, -float(g @ g)
            f0 = fun(x)
            t = 1.0
            # predicted decrease below the energy's rounding level: the merit
            # is noise there, so trust the full Newton step
            if -slope > 1e-12 * abs(f0):
                while t >= min_step:
                    f1 = fun(x + t * d)
                    if f1 <= f0 + armijo * t * slope:
                        break
                    t *= backtrack
                else:
                    t = min_step
        else:
            if not np.all(np.isfinite(d)):
                d = -g
            r0 = 0.5 * float(g @ g)
            t = 1.0
            while t >= min_step:
                g1 = grad(x + t * d)
                if 0.5 * float(g1 @ g1) <= (1 - 2 * armijo * t) * r0:
                    break
                t *= backtrack
            else:
                t = min_step
        x = x + t * d
    return NewtonResult(x, max_iter, False, history)
