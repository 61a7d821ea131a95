"""Limited-memory quasi-Newton descent with backtracking line search.

The objective supplies an accurate *difference* ``f(x + a d) - f(x)``
alongside the usual value and gradient.  Armijo tests then stay
meaningful after ``f`` itself has stagnated at round-off, which is what
lets the solvers push residuals far below ``sqrt(machine eps)``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = ["OptResult", "lbfgs"]


@dataclass
class OptResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    gnorm: float
    iterations: int
    converged: bool
    message: str
    history: list = field(default_factory=list)
    decreases: list = field(default_factory=list)


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if pairs:
        s, y, _ = pairs[-1]
        yy = np.dot(y, y)
        if yy > 0:
            q *= np.dot(s, y) / yy
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def lbfgs(obj, x0, gtol: float, max_iter: int, gscale: float = 1.0,
          memory: int = 10, energy_rtol: float | None = None, window: int = 5,
          project=None, c1: float = 1e-4) -> OptResult:
    """Minimize ``obj`` from ``x0``.

    ``obj`` provides ``evaluate(x) -> (f, g, cache)`` and
    ``delta(x, cache, d) -> callable`` returning ``f(x + a d) - f(x)``.
    Converged when ``gscale * max|g| <= gtol`` and the total decrease over
    the last ``window`` iterations is at most ``energy_rtol * |f|``.
    ``project`` maps an accepted iterate back onto a constraint set.
    """
    x = np.array(x0, dtype=float)
    if project is not None:
        x = project(x)
    f, g, cache = obj.evaluate(x)
    history = [f]
    decreases = []
    pairs = deque(maxlen=memory)
    rtol = gtol * gtol if energy_rtol is None else energy_rtol

    def done():
        if gscale * np.max(np.abs(g), initial=0.0) > gtol:
            return False
        recent = decreases[-window:]
        return not recent or -sum(recent) <= rtol * max(abs(f), abs(history[0]), 1e-300)

    it = 0
    message = "iteration budget exhausted"
    while True:
        gnorm = gscale * np.max(np.abs(g), initial=0.0)
        if done():
            return OptResult(x, f, g, gnorm, it, True, "converged", history, decreases)
        if it >= max_iter:
            break
        d = _two_loop(g, list(pairs))
        slope = np.dot(g, d)
        if not slope < 0:
            pairs.clear()
            d = -g
            slope = -np.dot(g, g)
        if not pairs:
            d = d / max(np.max(np.abs(d)), 1e-300) * min(1.0, np.max(np.abs(x), initial=0.0) + 1.0)
            slope = np.dot(g, d)
        line = obj.delta(x, cache, d)
        a = 1.0
        accepted = False
        for _ in range(60):
            df = line(a)
            if np.isfinite(df) and df <= c1 * a * slope and df <= 0:
                accepted = True
                break
            a *= 0.5 if not np.isfinite(df) else max(0.1, min(0.5, -0.5 * slope * a / (df - slope * a)))
        if not accepted or df == 0:
            if pairs:
                pairs.clear()
                continue
            message = "line search failed"
            gnorm = gscale * np.max(np.abs(g), initial=0.0)
            return OptResult(x, f, g, gnorm, it, gnorm <= gtol, message, history, decreases)
        x_new = x + a * d
        if project is not None:
            x_new = project(x_new)
        f_new, g_new, cache = obj.evaluate(x_new)
        sv = x_new - x
        yv = g_new - g
        sy = np.dot(sv, yv)
        if sy > 1e-14 * np.sqrt(np.dot(sv, sv) * np.dot(yv, yv)):
            pairs.append((sv, yv, 1.0 / sy))
        x, f, g = x_new, f_new, g_new
        history.append(f)
        decreases.append(df)
        it += 1
    gnorm = gscale * np.max(np.abs(g), initial=0.0)
    return OptResult(x, f, g, gnorm, it, False, message, history, decreases)
