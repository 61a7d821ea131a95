"""Discrete exterior Dirichlet-to-Neumann map.

Exterior data are represented by full fields with zero interior values.
``<Lambda f, g>`` is the (sigma-weighted) energy pairing of the exterior
solution ``u_f`` with the zero-extended representative of ``g``.
"""
from __future__ import annotations

import csv
import hashlib
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .energy import AnisotropyField, ConformalCoefficient, p_energy, weak_pairing
from .grid import Field, hsp_norm, lp_norm, riesz
from .solver import DEFAULT_EPS_SCHEDULE, DomainMask, SolveReport, solve_exterior_value

__all__ = [
    "TraceDatum",
    "DnContext",
    "dn_pair",
    "dn_self",
    "quotient_independence_check",
    "dn_matrix_linear",
    "export_matrix_csv",
    "trace_norm",
]


@dataclass(frozen=True, eq=False)
class TraceDatum:
    """Exterior datum stored as its zero-extension representative."""

    field: Field
    mask: DomainMask

    @classmethod
    def from_field(cls, u: Field, mask: DomainMask) -> "TraceDatum":
        vals = u.values.copy()
        vals[mask.interior] = 0.0
        return cls(Field(u.grid, vals), mask)

    def __post_init__(self):
        if self.field.grid != self.mask.grid:
            raise ValueError("datum and mask grids differ")
        if np.any(self.field.values[self.mask.interior]):
            raise ValueError("trace datum must vanish on interior points")

    def key(self) -> str:
        return hashlib.sha1(np.ascontiguousarray(self.field.values).tobytes()).hexdigest()

    def __mul__(self, t: float) -> "TraceDatum":
        return TraceDatum(self.field * t, self.mask)

    __rmul__ = __mul__

    def __add__(self, other: "TraceDatum") -> "TraceDatum":
        return TraceDatum(self.field + other.field, self.mask)


@dataclass(eq=False)
class DnContext:
    """Problem data for the DN map plus a cache of exterior solves.

    ``warm``, when given, maps datum keys to interior values used as
    starting points; contexts sharing one mapping warm-start each other.
    """

    mask: DomainMask
    s: float
    p: float
    A: AnisotropyField | None = None
    sigma: ConformalCoefficient | None = None
    tol: float = 1e-10
    eps_schedule: tuple = DEFAULT_EPS_SCHEDULE
    warm: dict | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def solve(self, f: TraceDatum) -> SolveReport:
        """Exterior solve for ``f``, cached by the datum's byte hash."""
        key = f.key()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        with self._lock:
            hit = self._cache.get(key)
            if hit is None:
                x0 = None if self.warm is None else self.warm.get(key)
                hit = solve_exterior_value(f.field, self.mask, self.A, self.s, self.p, self.tol,
                                           self.sigma, eps_schedule=self.eps_schedule, x0=x0)
                self._cache[key] = hit
                if self.warm is not None:
                    m = hit.solution.m
                    self.warm[key] = hit.solution.values.reshape(-1, m)[self.mask.indices].ravel()
        return hit

    def with_sigma(self, sigma) -> "DnContext":
        return DnContext(self.mask, self.s, self.p, self.A, sigma, self.tol, self.eps_schedule,
                         self.warm)

    @property
    def cache_size(self) -> int:
        return len(self._cache)


def _as_datum(ctx: DnContext, f) -> TraceDatum:
    if isinstance(f, TraceDatum):
        return f
    return TraceDatum.from_field(f, ctx.mask)


def dn_pair(ctx: DnContext, f, g) -> float:
    """``<Lambda f, g>``: weak pairing of ``u_f`` with the field ``g``.

    ``f`` may be a :class:`TraceDatum` or any field (its interior values
    are dropped); ``g`` is used exactly as given, so passing a field with
    interior values probes quotient independence.
    """
    f = _as_datum(ctx, f)
    gf = g.field if isinstance(g, TraceDatum) else g
    if not np.any(f.field.values):
        return 0.0
    u = ctx.solve(f).solution
    return weak_pairing(u, gf, ctx.A, ctx.s, ctx.p, sigma=ctx.sigma)


def dn_self(ctx: DnContext, f) -> tuple:
    """``(<Lambda f, f>, p * E(u_f), solver residual)``."""
    f = _as_datum(ctx, f)
    if not np.any(f.field.values):
        return 0.0, 0.0, 0.0
    rep = ctx.solve(f)
    val = weak_pairing(rep.solution, f.field, ctx.A, ctx.s, ctx.p, sigma=ctx.sigma)
    en = ctx.p * p_energy(rep.solution, ctx.A, ctx.s, ctx.p, sigma=ctx.sigma)
    return val, en, rep.residual


def trace_norm(f: TraceDatum, s: float, p: float) -> float:
    """Upper-representative trace norm: ``H^{s,p}`` norm of the zero extension."""
    return hsp_norm(f.field, s, p)


def quotient_independence_check(ctx: DnContext, f, g, phi: Field) -> dict:
    """Deviation of ``<Lambda f, g + phi>`` from ``<Lambda f, g>`` for interior ``phi``.

    Since ``u_f`` solves the equation against interior test fields, the
    deviation equals the weak residual tested on ``phi``.  The returned
    ``slack`` is ``10 * residual * ||(-Delta)^{s/2} phi||_2`` plus a
    round-off allowance; the residual is measured per unit-L2 direction.
    """
    f = _as_datum(ctx, f)
    if np.any(phi.values[ctx.mask.exterior]):
        raise ValueError("phi must be supported in the domain")
    gf = g.field if isinstance(g, TraceDatum) else g
    base = dn_pair(ctx, f, gf)
    pert = dn_pair(ctx, f, gf + phi)
    dev = abs(pert - base)
    rep = ctx.solve(f) if np.any(f.field.values) else None
    res = rep.residual if rep is not None else 0.0
    phi_l2 = lp_norm(phi, 2.0)
    # the weak residual is sampled on random directions; the strong residual
    # sup-norm times the L1 norm of phi bounds the deviation rigorously
    grad = rep.grad_norm if rep is not None else 0.0
    phi_l1 = float(np.sum(np.abs(phi.values)) * phi.grid.cellvol)
    slack = 10.0 * max(res * phi_l2, grad * phi_l1) + 1e-12 * (abs(base) + abs(pert))
    return {"deviation": dev, "slack": slack, "within": dev <= slack, "base": base}


def dn_matrix_linear(ctx: DnContext) -> tuple:
    """Dense ``M[i, j] = <Lambda e_i, e_j>`` over exterior points for ``p = 2``.

    ``e_i`` are unit exterior values.  Built from one exterior solve per
    exterior point, so intended for small grids.  Returns ``(M, flat indices
    of the exterior points)``.
    """
    if ctx.p != 2:
        raise ValueError("the DN matrix is only defined for the linear case p = 2")
    grid = ctx.mask.grid
    ext = np.flatnonzero(ctx.mask.exterior.ravel())
    m = 1
    A = ctx.A if ctx.A is not None else AnisotropyField.identity(grid, m)
    sig = ctx.sigma.sigma if isinstance(ctx.sigma, ConformalCoefficient) else ctx.sigma
    W = np.empty((ext.size, ext.size))
    for col, i in enumerate(ext):
        e = np.zeros(grid.size)
        e[i] = 1.0
        u = ctx.solve(TraceDatum(Field(grid, e.reshape(grid.shape + (1,))), ctx.mask)).solution
        w = riesz(grid, u.values, ctx.s)
        fl = A.apply(w)
        if sig is not None:
            fl = fl * sig[..., None]
        W[:, col] = riesz(grid, fl, ctx.s).ravel()[ext] * grid.cellvol
    # W[j, i] = <Lambda e_i, e_j>
    return W.T.copy(), ext


def export_matrix_csv(M: np.ndarray, path, indices=None) -> Path:
    """Write the matrix as CSV; the first row lists the exterior point indices."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        idx = np.arange(M.shape[0]) if indices is None else indices
        wr.writerow([int(i) for i in idx])
        for row in M:
            wr.writerow([repr(float(v)) for v in row])
    return path
