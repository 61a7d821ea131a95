"""First eigenpair of the fractional p-biharmonic operator on a domain.

``lambda1`` is the minimum of ``||(-Delta)^{s/2} u||_p^p`` over scalar
fields supported in the domain with ``||u||_p = 1``; the optimal Poincare
constant is ``lambda1 ** (-1/p)``.  Minimization runs L-BFGS on the
Rayleigh quotient and renormalizes every accepted iterate.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grid import Field, _lp, riesz
from .optim import lbfgs
from .solver import DomainMask, _density_increment

__all__ = [
    "PoincareResult",
    "RestartRecord",
    "poincare_eigenpair",
    "rayleigh_quotient",
    "eigen_residual",
    "rayleigh_lower_bound_check",
]


@dataclass
class RestartRecord:
    seed: int
    value: float
    grad_norm: float
    iterations: int
    converged: bool


@dataclass
class PoincareResult:
    """``lambda1``, ``c_star = lambda1**(-1/p)``, the unit-norm minimizer
    and its Euler-Lagrange residual, plus one record per restart.

    ``limits`` lists the distinct restart limits, identified up to sign.
    """

    lambda1: float
    c_star: float
    minimizer: Field
    el_residual: float
    p: float
    s: float
    restarts: list = field(default_factory=list)
    limits: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "c_star": self.c_star,
            "el_residual": self.el_residual,
            "p": self.p,
            "s": self.s,
            "restarts": [vars(r) for r in self.restarts],
            "limits": self.limits,
            "wall_time": self.wall_time,
        }


class _Rayleigh:
    """Quotient ``sum |w|^p / sum |u|^p`` on interior values (cell volume cancels)."""

    def __init__(self, mask: DomainMask, s: float, p: float):
        self.grid = mask.grid
        self.idx = mask.indices
        self.s, self.p = s, p

    def scatter(self, x):
        u = np.zeros(self.grid.size)
        u[self.idx] = x
        return u.reshape(self.grid.shape + (1,))

    def evaluate(self, x):
        p = self.p
        u = self.scatter(x)
        w = riesz(self.grid, u, self.s)
        aw = np.abs(w)
        num = float(np.sum(aw ** p))
        den = float(np.sum(np.abs(x) ** p))
        R = num / den
        gn = p * riesz(self.grid, np.sign(w) * aw ** (p - 1), self.s).ravel()[self.idx]
        gd = p * np.sign(x) * np.abs(x) ** (p - 1)
        g = (gn - R * gd) / den
        return R, g, (w, num, den)

    def delta(self, x, cache, d):
        w, num, den = cache
        p = self.p
        wd = riesz(self.grid, self.scatter(d), self.s)
        wq, wwd, dd = w * w, w * wd, wd * wd
        uq, ud, d2 = x * x, x * d, d * d

        def line(a):
            dn = p * float(np.sum(_density_increment(wq, 2 * a * wwd + a * a * dd, p)))
            dD = p * float(np.sum(_density_increment(uq, 2 * a * ud + a * a * d2, p)))
            return (dn * den - num * dD) / (den * (den + dD))

        return line


def _normalize(grid, x, p):
    nrm = (np.sum(np.abs(x) ** p) * grid.cellvol) ** (1.0 / p)
    if not nrm > 0 or not np.isfinite(nrm):
        raise FloatingPointError("iterate collapsed to zero on the constraint sphere")
    return x / nrm


def rayleigh_quotient(u: Field, s: float, p: float) -> float:
    """``||(-Delta)^{s/2} u||_p^p / ||u||_p^p``."""
    if not np.any(u.values):
        raise ValueError("Rayleigh quotient of the zero field is undefined")
    return _lp(u.grid, riesz(u.grid, u.values, s), p) ** p / _lp(u.grid, u.values, p) ** p


def eigen_residual(u: Field, mu: float, mask: DomainMask, s: float, p: float,
                   n_dirs: int = 32, seed: int = 12345) -> float:
    """Largest ``|int |w|^{p-2} w (-Delta)^{s/2} v - mu int |u|^{p-2} u v|``
    over random unit-L2 interior directions ``v``; ``u`` is rescaled to unit
    ``L^p`` norm first so the residual is scale-free."""
    grid = u.grid
    vals = u.values / _lp(grid, u.values, p)
    w = riesz(grid, vals, s)
    r = riesz(grid, np.sign(w) * np.abs(w) ** (p - 1), s) - mu * np.sign(vals) * np.abs(vals) ** (p - 1)
    r_int = r.ravel()[mask.indices]
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n_dirs, r_int.size))
    V /= np.sqrt(np.sum(V * V, axis=1) * grid.cellvol)[:, None]
    return float(np.max(np.abs(V @ r_int)) * grid.cellvol)


def _one_restart(mask, s, p, tol, seed, max_iter):
    grid = mask.grid
    obj = _Rayleigh(mask, s, p)
    rng = np.random.default_rng(seed)
    x0 = np.abs(rng.standard_normal(mask.n_interior)) + 0.1 * rng.standard_normal(mask.n_interior)
    project = lambda x: _normalize(grid, x, p)  # noqa: E731
    # gradient of the quotient is p/den times the strong residual on unit-norm iterates
    res = lbfgs(obj, x0, tol, max_iter, gscale=1.0 / (p * grid.cellvol), project=project,
                energy_rtol=tol * tol)
    return seed, res


def _distinct_limits(records, sols, grid, p, rtol=1e-4):
    limits = []
    reps = []
    for rec, x in zip(records, sols):
        for lim, y in zip(limits, reps):
            d = min(np.sum(np.abs(x - y) ** p), np.sum(np.abs(x + y) ** p)) * grid.cellvol
            if d ** (1.0 / p) <= rtol:
                lim["seeds"].append(rec.seed)
                break
        else:
            limits.append({"value": rec.value, "seeds": [rec.seed]})
            reps.append(x)
    return limits


def poincare_eigenpair(mask: DomainMask, s: float, p: float, tol: float = 1e-9,
                       restarts: int = 5, seeds=None, max_iter: int | None = None,
                       workers: int = 1) -> PoincareResult:
    """Minimize the fractional Rayleigh quotient over interior-supported scalar fields.

    Runs ``restarts`` independent L-BFGS descents (seeds ``0..restarts-1``
    unless given), keeps the smallest converged value (ties broken by seed)
    and verifies the Euler-Lagrange identity on the winner.

    Raises
    ------
    ConvergenceError-like ``RuntimeError`` if no restart converges.
    """
    if p <= 1 or s <= 0 or tol <= 0:
        raise ValueError("need p > 1, s > 0 and tol > 0")
    t0 = time.perf_counter()
    seeds = list(range(restarts)) if seeds is None else list(seeds)[:restarts]
    if not seeds:
        raise ValueError("need at least one restart")
    grid = mask.grid
    max_iter = 10 * grid.size if max_iter is None else max_iter
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outs = list(pool.map(lambda sd: _one_restart(mask, s, p, tol, sd, max_iter), seeds))
    else:
        outs = [_one_restart(mask, s, p, tol, sd, max_iter) for sd in seeds]
    records = [RestartRecord(sd, float(r.f), float(r.gnorm), r.iterations, bool(r.converged))
               for sd, r in outs]
    sols = [r.x for _, r in outs]
    ok = [i for i, rec in enumerate(records) if rec.converged]
    if not ok:
        best = min(records, key=lambda r: (r.value, r.seed))
        raise RuntimeError(f"no restart converged; best value {best.value:.6e} "
                           f"(seed {best.seed}, grad {best.grad_norm:.2e})")
    i = min(ok, key=lambda k: (records[k].value, records[k].seed))
    x = sols[i]
    if np.sum(x) < 0:
        x = -x
    u = Field(grid, _Rayleigh(mask, s, p).scatter(x))
    lam = rayleigh_quotient(u, s, p)
    res = eigen_residual(u, lam, mask, s, p)
    return PoincareResult(
        lambda1=lam,
        c_star=lam ** (-1.0 / p),
        minimizer=u,
        el_residual=res,
        p=p,
        s=s,
        restarts=records,
        limits=_distinct_limits([records[k] for k in ok], [sols[k] for k in ok], grid, p),
        wall_time=time.perf_counter() - t0,
    )


def rayleigh_lower_bound_check(v: Field, mu: float, mask: DomainMask, s: float, p: float,
                               lambda1: float | None = None, slack: float = 1e-8,
                               eig_tol: float | None = None, **kwargs) -> bool:
    """True iff ``mu >= lambda1 - slack``.

    ``v`` must be a nonzero interior-supported field.  When ``eig_tol`` is
    given, ``v`` is first required to satisfy the eigen-identity with its
    own Rayleigh quotient to that tolerance.  ``lambda1`` is computed with
    :func:`poincare_eigenpair` (extra keyword arguments forwarded) if absent.
    """
    if v.m != 1:
        raise ValueError("scalar fields only")
    if not np.any(v.values):
        raise ValueError("v must be nonzero")
    if np.any(v.values[mask.exterior]):
        raise ValueError("v must vanish outside the domain")
    if eig_tol is not None:
        res = eigen_residual(v, rayleigh_quotient(v, s, p), mask, s, p)
        if res > eig_tol:
            raise ValueError(f"v is not an eigen-candidate (residual {res:.2e} > {eig_tol:.1e})")
    if lambda1 is None:
        lambda1 = poincare_eigenpair(mask, s, p, **kwargs).lambda1
    return bool(mu >= lambda1 - slack)
