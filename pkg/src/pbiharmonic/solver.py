"""Forward solvers by convex minimization over interior degrees of freedom.

Interior-source problem: minimize ``E(u) - <F, u>`` over fields vanishing
outside the domain.  Exterior-value problem: minimize ``E(u)`` over
fields equal to ``u0`` outside the domain.  ``E`` is the (optionally
sigma-weighted) anisotropic p-energy.  For ``1 < p < 2`` the energy is
smoothed with ``sqrt(|z|^2 + eps^2)`` along a decreasing ``eps`` schedule,
followed by an unsmoothed polish.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .energy import AnisotropyField, ConformalCoefficient, density_terms, energy_density
from .grid import Field, GridSpec, _lp, riesz
from .optim import lbfgs

__all__ = [
    "DomainMask",
    "SolveReport",
    "ConvergenceError",
    "solve_interior_source",
    "solve_exterior_value",
    "uniqueness_probe",
    "weak_residual",
    "DEFAULT_EPS_SCHEDULE",
]

DEFAULT_EPS_SCHEDULE = (1e-2, 1e-4, 1e-6)


@dataclass(frozen=True, eq=False)
class DomainMask:
    """Boolean partition of the grid: ``interior`` marks the domain."""

    grid: GridSpec
    interior: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.interior, dtype=bool)
        if mask.shape != self.grid.shape:
            raise ValueError(f"mask shape {mask.shape} does not match grid {self.grid.shape}")
        if not mask.any() or mask.all():
            raise ValueError("mask needs at least one interior and one exterior point")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "interior", mask)
        object.__setattr__(self, "_idx", np.flatnonzero(mask.ravel()))

    @classmethod
    def box(cls, grid: GridSpec, lo, hi) -> "DomainMask":
        """Points with ``lo <= x < hi`` on every axis (coordinates in ``[-L/2, L/2)``)."""
        return cls(grid, box_indicator(grid, lo, hi))

    @property
    def exterior(self) -> np.ndarray:
        return ~self.interior

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    @property
    def n_exterior(self) -> int:
        return self.grid.size - self.n_interior

    @property
    def indices(self) -> np.ndarray:
        return self._idx

    def contains(self, other: "DomainMask") -> bool:
        return bool(np.all(self.interior[other.interior]))


def box_indicator(grid: GridSpec, lo, hi) -> np.ndarray:
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (grid.n,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (grid.n,))
    tol = 1e-9 * grid.h
    out = np.ones(grid.shape, dtype=bool)
    for X, a, b in zip(grid.coords(), lo, hi):
        out &= (X >= a - tol) & (X < b - tol)
    return out


@dataclass
class SolveReport:
    """Outcome of one forward solve.

    ``grad_norm`` is the sup-norm of the strong residual
    ``apply_operator(u) - F`` on interior points; ``residual`` is the
    largest weak residual against unit-L2 random interior directions.
    """

    solution: Field
    energy: float
    grad_norm: float
    iterations: int
    wall_time: float
    eps: float
    residual: float
    converged: bool
    tol: float
    message: str = ""
    energy_history: list = field(default_factory=list, repr=False)
    energy_decreases: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "energy": self.energy,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "eps": self.eps,
            "residual": self.residual,
            "converged": self.converged,
            "tol": self.tol,
            "message": self.message,
        }


class ConvergenceError(RuntimeError):
    """Raised when a solve misses its tolerance; carries the last report."""

    def __init__(self, report: SolveReport):
        super().__init__(f"solver did not converge: {report.message} "
                         f"(grad_norm={report.grad_norm:.3e}, tol={report.tol:.1e})")
        self.report = report


def _density_increment(b: np.ndarray, dq: np.ndarray, p: float) -> np.ndarray:
    """``((b + dq)^{p/2} - b^{p/2}) / p`` without cancellation."""
    if p == 2:
        return 0.5 * dq
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = np.maximum(np.where(b > 0, dq / b, 0.0), -1.0)
        inc = np.where(b > 0, b ** (p / 2) * np.expm1(0.5 * p * np.log1p(r)),
                       np.maximum(dq, 0.0) ** (p / 2))
    return inc / p


class EnergyObjective:
    """Energy on the interior degrees of freedom, for :func:`~pbiharmonic.optim.lbfgs`."""

    def __init__(self, base: np.ndarray, mask: DomainMask, A: AnisotropyField, s: float,
                 p: float, sigma=None, F: np.ndarray | None = None, eps: float = 0.0):
        self.grid = mask.grid
        self.base = base
        self.m = base.shape[-1]
        self.idx = mask.indices
        self.A, self.s, self.p, self.eps = A, s, p, eps
        self.sigma = sigma
        self.F = F
        self.hn = self.grid.cellvol

    def scatter(self, x: np.ndarray, base: np.ndarray | None = None) -> np.ndarray:
        u = (self.base if base is None else base).copy()
        u.reshape(-1, self.m)[self.idx] = x.reshape(-1, self.m)
        return u

    def _weight(self, arr):
        return arr if self.sigma is None else arr * self.sigma

    def evaluate(self, x):
        u = self.scatter(x)
        w = riesz(self.grid, u, self.s)
        z, q, factor = density_terms(w, self.A, self.p, self.eps)
        f = float(np.sum(self._weight(energy_density(q, self.p, self.eps))) * self.hn)
        flux = self.A.apply_sqrt(z) * self._weight(factor)[..., None]
        strong = riesz(self.grid, flux, self.s)
        if self.F is not None:
            f -= float(np.sum(self.F * u) * self.hn)
            strong = strong - self.F
        g = strong.reshape(-1, self.m)[self.idx].ravel() * self.hn
        return f, g, (z, q)

    def delta(self, x, cache, d):
        z, q = cache
        D = self.scatter(d, np.zeros_like(self.base))
        zd = self.A.apply_sqrt(riesz(self.grid, D, self.s))
        zz = np.sum(z * zd, axis=-1)
        dd = np.sum(zd * zd, axis=-1)
        b = q + self.eps * self.eps
        lin = 0.0 if self.F is None else float(np.sum(self.F * D) * self.hn)
        p, hn = self.p, self.hn

        def line(a):
            inc = _density_increment(b, 2 * a * zz + a * a * dd, p)
            return float(np.sum(self._weight(inc)) * hn) - a * lin

        return line


def weak_residual(u: Field, mask: DomainMask, A, s, p, sigma=None, F: Field | None = None,
                  n_dirs: int = 32, seed: int = 12345) -> float:
    """Largest ``|<(-Delta)^s_{p,A} u - F, v>|`` over random unit-L2 interior ``v``."""
    grid = u.grid
    A = A if A is not None else AnisotropyField.identity(grid, u.m)
    sig = sigma.sigma if isinstance(sigma, ConformalCoefficient) else sigma
    w = riesz(grid, u.values, s)
    z, q, factor = density_terms(w, A, p)
    fl = A.apply_sqrt(z) * (factor if sig is None else factor * sig)[..., None]
    r = riesz(grid, fl, s)
    if F is not None:
        r = r - F.values
    r_int = r.reshape(-1, u.m)[mask.indices]
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n_dirs,) + r_int.shape)
    V /= np.sqrt(np.sum(V * V, axis=(1, 2)) * grid.cellvol)[:, None, None]
    return float(np.max(np.abs(np.einsum("kij,ij->k", V, r_int))) * grid.cellvol)


def _prepare(grid_field: Field, mask: DomainMask, A, sigma):
    if grid_field.grid != mask.grid:
        raise ValueError("data and mask live on different grids")
    A = A if A is not None else AnisotropyField.identity(mask.grid, grid_field.m)
    if A.grid != mask.grid or A.m != grid_field.m:
        raise ValueError("anisotropy field does not match grid or component count")
    if isinstance(sigma, ConformalCoefficient):
        sigma = sigma.sigma
    return A, sigma


def _check_params(s, p, tol):
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    if s <= 0:
        raise ValueError(f"s must be positive, got {s}")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")


def _minimize(base, mask, A, s, p, sigma, F, tol, x0, max_iter, eps_schedule, polish=True):
    """Run the (continuation) minimization; returns (x, opt, eps_used, iterations)."""
    grid = mask.grid
    gscale = 1.0 / grid.cellvol
    stages = [0.0] if p >= 2 else [e for e in eps_schedule] + ([0.0] if polish else [])
    x = x0
    total = 0
    history, decreases = [], []
    opt = None
    eps = 0.0
    for k, eps in enumerate(stages):
        last = k == len(stages) - 1
        obj = EnergyObjective(base, mask, A, s, p, sigma, F, eps)
        stage_tol = tol if last else max(tol, eps)
        opt = lbfgs(obj, x, stage_tol, max_iter - total, gscale=gscale)
        x = opt.x
        total += opt.iterations
        if k == 0 or not history:
            history.extend(opt.history)
        else:
            history.extend(opt.history[1:])
        decreases.extend(opt.decreases)
    return x, opt, eps, total, history, decreases


def _finish(u_vals, mask, A, s, p, sigma, F, tol, opt, eps, iters, t0, history, decreases,
            raise_on_failure):
    grid = mask.grid
    u = Field(grid, u_vals)
    res = weak_residual(u, mask, A, s, p, sigma, F)
    report = SolveReport(
        solution=u,
        energy=float(opt.f),
        grad_norm=float(opt.gnorm),
        iterations=iters,
        wall_time=time.perf_counter() - t0,
        eps=eps,
        residual=res,
        converged=bool(opt.converged),
        tol=tol,
        message=opt.message,
        energy_history=history,
        energy_decreases=decreases,
    )
    if not report.converged and raise_on_failure:
        raise ConvergenceError(report)
    return report


def solve_interior_source(F: Field, mask: DomainMask, A: AnisotropyField | None = None,
                          s: float = 0.5, p: float = 2.0, tol: float = 1e-10, sigma=None,
                          max_iter: int | None = None, eps_schedule=DEFAULT_EPS_SCHEDULE,
                          x0: np.ndarray | None = None,
                          raise_on_failure: bool = True) -> SolveReport:
    """Solve ``(-Delta)^s_{p,A} u = F`` in the domain, ``u = 0`` outside.

    ``F`` acts on test fields by grid quadrature.  Starts from zero interior
    values unless ``x0`` (interior values, flattened) is given.
    """
    _check_params(s, p, tol)
    t0 = time.perf_counter()
    A, sig = _prepare(F, mask, A, sigma)
    grid = mask.grid
    m = F.m
    base = np.zeros(grid.shape + (m,))
    if max_iter is None:
        max_iter = 10 * grid.size
    if x0 is None:
        x0 = np.zeros(mask.n_interior * m)
    x, opt, eps, iters, hist, decs = _minimize(base, mask, A, s, p, sig, F.values, tol,
                                                np.asarray(x0, float), max_iter, eps_schedule)
    u = EnergyObjective(base, mask, A, s, p, sig).scatter(x)
    return _finish(u, mask, A, s, p, sig, F, tol, opt, eps, iters, t0, hist, decs,
                   raise_on_failure)


def solve_exterior_value(u0: Field, mask: DomainMask, A: AnisotropyField | None = None,
                         s: float = 0.5, p: float = 2.0, tol: float = 1e-10, sigma=None,
                         max_iter: int | None = None, eps_schedule=DEFAULT_EPS_SCHEDULE,
                         x0: np.ndarray | None = None,
                         raise_on_failure: bool = True) -> SolveReport:
    """Solve ``(-Delta)^s_{p,A} u = 0`` in the domain with ``u = u0`` outside.

    Interior values of ``u0`` are ignored.  The default start is the
    ``p = 2`` isotropic extension of the exterior datum (computed at a loose
    tolerance) unless the problem is itself that linear problem.
    """
    _check_params(s, p, tol)
    t0 = time.perf_counter()
    A, sig = _prepare(u0, mask, A, sigma)
    grid = mask.grid
    m = u0.m
    base = u0.values.copy()
    base.reshape(-1, m)[mask.indices] = 0.0
    if max_iter is None:
        max_iter = 10 * grid.size
    linear_iso = p == 2 and A.is_identity and sig is None
    if x0 is None:
        x0 = np.zeros(mask.n_interior * m)
        if not linear_iso and np.any(base):
            ident = AnisotropyField.identity(grid, m)
            pre = lbfgs(EnergyObjective(base, mask, ident, s, 2.0), x0, 1e-6,
                        max_iter, gscale=1.0 / grid.cellvol)
            x0 = pre.x
    x, opt, eps, iters, hist, decs = _minimize(base, mask, A, s, p, sig, None, tol,
                                                np.asarray(x0, float), max_iter, eps_schedule)
    u = EnergyObjective(base, mask, A, s, p, sig).scatter(x)
    return _finish(u, mask, A, s, p, sig, None, tol, opt, eps, iters, t0, hist, decs,
                   raise_on_failure)


def uniqueness_probe(mask: DomainMask, A, s: float, p: float, *, u0: Field | None = None,
                     F: Field | None = None, seeds=(0, 1), tol: float = 1e-10,
                     sigma=None) -> dict:
    """Solve from several random starts and compare the solutions.

    Exactly one of ``u0`` (exterior problem) or ``F`` (interior source) is
    required.  Returns the largest pairwise ``||(-Delta)^{s/2}(u_i - u_j)||_p``
    and the slack ``10 * tol^{1/max(p-1, 1)}`` implied by strong monotonicity.
    """
    if (u0 is None) == (F is None):
        raise ValueError("pass exactly one of u0 or F")
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    data = u0 if u0 is not None else F
    scale = max(float(np.max(np.abs(data.values))), 1.0)
    sols = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        x0 = scale * rng.standard_normal(mask.n_interior * data.m)
        if u0 is not None:
            rep = solve_exterior_value(u0, mask, A, s, p, tol, sigma, x0=x0)
        else:
            rep = solve_interior_source(F, mask, A, s, p, tol, sigma, x0=x0)
        sols.append(rep.solution)
    dist = 0.0
    for a, b in itertools.combinations(sols, 2):
        diff = riesz(mask.grid, a.values - b.values, s)
        dist = max(dist, _lp(mask.grid, diff, p))
    return {
        "distance": dist,
        "slack": 10.0 * tol ** (1.0 / max(p - 1.0, 1.0)),
        "seeds": seeds,
        "solutions": sols,
    }
