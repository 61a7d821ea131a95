"""Conformal-coefficient inverse problem from exterior DN measurements.

Measurements are ``<Lambda_sigma u0, u0>`` for data ``u0`` supported in an
exterior window.  Two forward solves give the DN gap between coefficients,
which is sandwiched between weighted integrals of the ``sigma2`` solution.
The sandwich drives a single-measurement detection experiment and a
blockwise level-scan reconstruction.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dnmap import DnContext, TraceDatum, dn_pair
from .energy import AnisotropyField, ConformalCoefficient, density_terms
from .grid import Field, GridSpec, riesz
from .solver import DomainMask

__all__ = [
    "DnMeasurement",
    "MeasurementOracle",
    "SigmaEstimate",
    "dn_gap",
    "monotonicity_bounds",
    "lower_bound_density",
    "lower_bound_beta",
    "beta_factor",
    "single_measurement_experiment",
    "block_partition",
    "bump_probes",
    "reconstruct_sigma",
    "write_decision_ledger",
]


def _sig(x):
    return x.sigma if isinstance(x, ConformalCoefficient) else np.asarray(x, dtype=float)


def _coef(grid, x) -> ConformalCoefficient:
    if isinstance(x, ConformalCoefficient):
        return x
    arr = np.broadcast_to(np.asarray(x, dtype=float), grid.shape)
    return ConformalCoefficient(grid, arr, float(arr.min()))


@dataclass(frozen=True)
class DnMeasurement:
    """One DN self-pairing, optionally perturbed as ``clean * (1 + eta * zeta)``."""

    datum: TraceDatum
    value: float
    residual: float
    eta: float = 0.0
    seed: int | None = None
    clean_value: float | None = None


class MeasurementOracle:
    """Answers ``<Lambda_sigma u0, u0>`` for a hidden coefficient.

    Noise ``eta`` draws ``zeta`` uniformly in [-1, 1] from a generator
    seeded with ``seed``; draws follow the order of queries.  ``calls``
    counts forward solves.
    """

    def __init__(self, mask: DomainMask, sigma_true, s: float, p: float,
                 A: AnisotropyField | None = None, tol: float = 1e-10, eta: float = 0.0,
                 seed: int = 0):
        self._ctx = DnContext(mask, s, p, A, _coef(mask.grid, sigma_true), tol)
        self.eta = float(eta)
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self.calls = 0

    @property
    def mask(self) -> DomainMask:
        return self._ctx.mask

    def measure(self, u0) -> DnMeasurement:
        datum = u0 if isinstance(u0, TraceDatum) else TraceDatum.from_field(u0, self.mask)
        fresh = datum.key() not in self._ctx._cache
        clean = dn_pair(self._ctx, datum, datum)
        self.calls += int(fresh)
        res = self._ctx.solve(datum).residual if np.any(datum.field.values) else 0.0
        value = clean
        if self.eta > 0:
            value = clean * (1.0 + self.eta * self._rng.uniform(-1.0, 1.0))
        return DnMeasurement(datum, value, res, self.eta, self.seed, clean)


@dataclass
class SigmaEstimate:
    """Per-block admissible intervals ``[lower, upper]`` and midpoint estimates.

    ``inconclusive`` lists blocks whose interval could not be certified.
    ``field`` is the estimate painted on the grid (floor outside the blocks).
    """

    lower: np.ndarray
    upper: np.ndarray
    estimate: np.ndarray
    inconclusive: list
    field: Field
    solves: int
    sweeps: int
    ledger: list = field(default_factory=list, repr=False)
    wall_time: float = 0.0


def _slack(reports, values, factor=10.0):
    res = sum(r.residual for r in reports)
    return factor * res + 1e-11 * sum(abs(v) for v in values)


def dn_gap(u0, sigma1, sigma2, A, mask: DomainMask, s: float, p: float,
           tol: float = 1e-10) -> float:
    """``<(Lambda_{sigma1} - Lambda_{sigma2}) u0, u0>`` from two forward solves."""
    return monotonicity_bounds(u0, sigma1, sigma2, A, mask, s, p, tol)["gap"]


def beta_factor(beta, p: float):
    """``(1 + beta)^{p'} / beta``: the beta-dependence of the Young-inequality constant."""
    q = p / (p - 1)
    beta = np.asarray(beta, dtype=float)
    return (1 + beta) ** q / beta


def lower_bound_density(sig1, sig2, p: float, beta: float | None = None):
    """Pointwise weight multiplying ``|A^{1/2}(-Delta)^{s/2} u2|^p`` in the lower bound.

    ``beta * sigma2 - (1/p') (1+beta)^{p'} p^{-1/(p-1)} sigma2^{p'} sigma1^{-1/(p-1)}``;
    ``beta = None`` selects ``p - 1``, where the weight simplifies to
    ``(p-1) sigma2 sigma1^{-1/(p-1)} (sigma1^{1/(p-1)} - sigma2^{1/(p-1)})``.
    """
    sig1 = np.asarray(sig1, dtype=float)
    sig2 = np.asarray(sig2, dtype=float)
    e = 1.0 / (p - 1)
    if beta is None:
        return (p - 1) * sig2 * sig1 ** (-e) * (sig1 ** e - sig2 ** e)
    q = p / (p - 1)
    return beta * sig2 - (1 + beta) ** q * p ** (-e) * sig2 ** q * sig1 ** (-e) / q


def _weight(u2: Field, A, s, p):
    A = A if A is not None else AnisotropyField.identity(u2.grid, u2.m)
    _, q, _ = density_terms(riesz(u2.grid, u2.values, s), A, p)
    return q ** (p / 2)


def monotonicity_bounds(u0, sigma1, sigma2, A, mask: DomainMask, s: float, p: float,
                        tol: float = 1e-10, beta: float | None = None,
                        ctx1: DnContext | None = None, ctx2: DnContext | None = None) -> dict:
    """Lower bound, DN gap and upper bound for one datum.

    ``upper = sum (sigma1 - sigma2) |z2|^p h^n`` and ``lower`` integrates
    :func:`lower_bound_density` against ``|z2|^p``, ``z2`` being
    ``A^{1/2} (-Delta)^{s/2} u2`` for the ``sigma2`` solution ``u2``.
    ``slack`` is 10 times the summed weak residuals of both solves plus a
    relative round-off allowance.  Pre-built contexts may be passed to reuse
    cached solves.
    """
    grid = mask.grid
    c1, c2 = _coef(grid, sigma1), _coef(grid, sigma2)
    datum = u0 if isinstance(u0, TraceDatum) else TraceDatum.from_field(u0, mask)
    if not np.any(datum.field.values):
        return {"lower": 0.0, "gap": 0.0, "upper": 0.0, "slack": 0.0, "v1": 0.0, "v2": 0.0,
                "weight": np.zeros(grid.shape)}
    ctx1 = ctx1 or DnContext(mask, s, p, A, c1, tol)
    ctx2 = ctx2 or DnContext(mask, s, p, A, c2, tol)
    v1 = dn_pair(ctx1, datum, datum)
    v2 = dn_pair(ctx2, datum, datum)
    r1, r2 = ctx1.solve(datum), ctx2.solve(datum)
    wgt = _weight(r2.solution, A, s, p)
    hn = grid.cellvol
    upper = float(np.sum((c1.sigma - c2.sigma) * wgt) * hn)
    lower = float(np.sum(lower_bound_density(c1.sigma, c2.sigma, p, beta) * wgt) * hn)
    return {"lower": lower, "gap": v1 - v2, "upper": upper,
            "slack": _slack([r1, r2], [v1, v2]), "v1": v1, "v2": v2, "weight": wgt}


def lower_bound_beta(u0, sigma1, sigma2, A, mask, s, p, betas, tol=1e-10,
                     normalized: bool = True) -> np.ndarray:
    """Lower-bound integral at each ``beta`` from one ``sigma2`` solve.

    With ``normalized`` the integral is divided by ``beta``, leaving
    ``int sigma2 sigma1^{-1/(p-1)} (sigma1^{1/(p-1)} - c(beta) sigma2^{1/(p-1)}) |z2|^p``
    with ``c(beta) = (1/p') p^{-1/(p-1)} (1+beta)^{p'} / beta``; ``c`` is
    smallest at ``beta = p - 1``, where it equals 1.  Without it the raw
    bound is returned, whose maximizer depends on the contrast.
    """
    grid = mask.grid
    c1, c2 = _coef(grid, sigma1), _coef(grid, sigma2)
    ctx2 = DnContext(mask, s, p, A, c2, tol)
    datum = u0 if isinstance(u0, TraceDatum) else TraceDatum.from_field(u0, mask)
    wgt = _weight(ctx2.solve(datum).solution, A, s, p)
    vals = np.array([np.sum(lower_bound_density(c1.sigma, c2.sigma, p, b) * wgt) * grid.cellvol
                     for b in betas])
    return vals / np.asarray(betas, dtype=float) if normalized else vals


def block_partition(grid: GridSpec, region: DomainMask | np.ndarray, size: int) -> list:
    """Split ``region`` into square blocks of ``size`` points per axis (row-major order)."""
    reg = region.interior if isinstance(region, DomainMask) else np.asarray(region, bool)
    idx = np.argwhere(reg)
    lo, hi = idx.min(axis=0), idx.max(axis=0) + 1
    ranges = [range(a, b, size) for a, b in zip(lo, hi)]
    blocks = []
    for corner in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(grid.n, -1).T:
        sl = tuple(slice(c, c + size) for c in corner)
        b = np.zeros(grid.shape, dtype=bool)
        b[sl] = True
        b &= reg
        if b.any():
            blocks.append(b)
    return blocks


def bump_probes(grid: GridSpec, window: np.ndarray, count: int, seed: int = 0,
                radius: float | None = None, modes: int = 2) -> list:
    """Smooth compactly supported bumps inside ``window``, modulated by random low modes.

    Centers are drawn from window points at least ``radius`` from the window
    edge where possible; each probe is ``cos^2`` tapered and times a random
    trigonometric polynomial of degree ``modes``.  Returns fields vanishing
    outside ``window``.
    """
    rng = np.random.default_rng(seed)
    radius = 4 * grid.h if radius is None else radius
    X = np.stack(grid.coords(), axis=-1)
    pts = np.argwhere(window)
    probes = []
    for _ in range(count):
        c = X[tuple(pts[rng.integers(len(pts))])]
        r = np.sqrt(np.sum((X - c) ** 2, axis=-1))
        bump = np.where(r < radius, np.cos(0.5 * np.pi * r / radius) ** 2, 0.0)
        mod = 1.0 + sum(rng.normal(0, 0.5) * np.cos(k * np.sum(X - c, axis=-1) / radius
                                                     + rng.uniform(0, 2 * np.pi))
                        for k in range(1, modes + 1))
        vals = bump * mod * window
        if not np.any(vals):
            vals = window.astype(float)
        probes.append(Field(grid, vals[..., None]))
    return probes


def single_measurement_experiment(mask: DomainMask, sigma1, sigma2, u0: Field,
                                  window: np.ndarray, s: float, p: float,
                                  A: AnisotropyField | None = None, tol: float = 1e-10,
                                  blocks: list | None = None,
                                  coverage_rtol: float = 1e-10) -> dict:
    """Detect a coefficient difference from one exterior measurement.

    Requires ``sigma1 >= sigma2`` and a nonzero ``u0`` supported in the
    exterior ``window``.  Reports the gap, its certified lower bound, the
    verdict ``flagged = gap > slack`` and, per block where ``sigma1 - sigma2``
    is positive, the block's share of the lower bound.  When the gap sits
    within slack, each such block gets the bound ``int_B |z2|^p <= slack / c_B``
    with ``c_B`` the smallest lower-bound weight on the block.
    ``conclusive`` marks points outside the window carrying weight above
    ``coverage_rtol`` times the peak weight.
    """
    grid = mask.grid
    window = np.asarray(window, dtype=bool)
    if not np.any(u0.values):
        raise ValueError("the experiment needs a nonzero datum u0")
    if np.any(u0.values[~window]):
        raise ValueError("u0 must be supported in the window")
    if np.any(window & mask.interior):
        raise ValueError("the window must lie in the exterior")
    s1, s2 = _sig(_coef(grid, sigma1)), _sig(_coef(grid, sigma2))
    if np.any(s1 < s2):
        raise ValueError("the experiment assumes sigma1 >= sigma2 everywhere")
    out = monotonicity_bounds(u0, sigma1, sigma2, A, mask, s, p, tol)
    wgt = out.pop("weight")
    dens = lower_bound_density(s1, s2, p)
    hn = grid.cellvol
    flagged = out["gap"] > out["slack"]
    if blocks is None:
        blocks = block_partition(grid, np.ones(grid.shape, bool), 4)
    report_blocks = []
    for k, b in enumerate(blocks):
        contrast = (s1 - s2)[b]
        if contrast.max() <= 0:
            continue
        cB = float(dens[b].min())
        share = float(np.sum(dens[b] * wgt[b]) * hn)
        entry = {"block": k, "contrast": float(contrast.min()), "c_B": cB, "lower_share": share,
                 "weight": float(np.sum(wgt[b]) * hn)}
        if not flagged and cB > 0:
            entry["weight_bound"] = out["slack"] / cB
        report_blocks.append(entry)
    conclusive = (wgt > coverage_rtol * wgt.max()) & ~window
    out.update({
        "flagged": bool(flagged),
        "threshold": out["lower"],
        "threshold_met": bool(out["gap"] >= out["lower"] - out["slack"]),
        "blocks": report_blocks,
        "conclusive": conclusive,
    })
    return out


class _Budget(Exception):
    pass


class _Scanner:
    """Evaluates measured-minus-simulated gaps for test coefficients, counting solves."""

    def __init__(self, oracle, datums, meas, slack_meas, sigma_floor, floor_level, blocks):
        ctx = oracle._ctx
        self.mask, self.s, self.p, self.A, self.tol = ctx.mask, ctx.s, ctx.p, ctx.A, ctx.tol
        self.datums, self.meas, self.slack_meas = datums, meas, slack_meas
        self.sigma_floor = float(sigma_floor)
        self.coef_floor = float(floor_level)
        self.blocks = blocks
        self.warm = {}
        self.solves = 0
        self._memo = {}

    def paint(self, values):
        sig = np.full(self.mask.grid.shape, self.sigma_floor)
        for b, v in zip(self.blocks, values):
            sig[b] = v
        return sig

    def gaps(self, values):
        key = tuple(float(v) for v in values)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        coef = ConformalCoefficient(self.mask.grid, self.paint(values), self.coef_floor)
        ctx = DnContext(self.mask, self.s, self.p, self.A, coef, self.tol, warm=self.warm)
        g = np.empty(len(self.datums))
        sl = np.empty(len(self.datums))
        for j, f in enumerate(self.datums):
            sim = dn_pair(ctx, f, f)
            rep = ctx.solve(f)
            g[j] = self.meas[j].value - sim
            sl[j] = self.slack_meas[j] + 10.0 * rep.residual + 1e-11 * abs(sim)
        self.solves += len(self.datums)
        self._memo[key] = (g, sl)
        return g, sl


def _verdict(g, sl):
    not_below = bool(np.all(g > -sl))   # the truth may lie at or above this level
    not_above = bool(np.all(g < sl))    # the truth may lie at or below this level
    return not_below, not_above


def reconstruct_sigma(oracle: MeasurementOracle, probes: list, blocks: list, levels,
                      sigma_floor: float, budget: int | None = None, max_sweeps: int = 4,
                      slack_factor: float = 10.0, noise_slack: float | None = None) -> SigmaEstimate:
    """Blockwise level scan for a piecewise-constant coefficient.

    Each probe is measured once; every comparison is the gap
    ``measured - simulated`` for a test coefficient ``tau``.  If ``tau`` lies
    below the truth all gaps are nonnegative, if above all are nonpositive,
    so a gap beyond ``-slack`` (``+slack``) rules out that ``tau`` is below
    (above) the truth.

    1. Anchor scan: for every block ``b`` and level ``t`` the test
       coefficient is ``sigma_floor`` with value ``t`` on ``b``.  Levels rise
       until every gap is below ``-slack``; the pair with the smallest
       largest absolute gap seeds the estimate.
    2. Sweeps: each block is rescanned with the other blocks at their
       current estimates.  Its interval is bracketed by the largest level not
       ruled out from below and the smallest level not ruled out from above;
       the estimate is the interval midpoint.  Sweeps stop once no estimate
       changes.

    ``budget`` caps forward solves; when it runs out the current estimate
    is returned and unscanned blocks are listed as inconclusive.
    """
    t0 = time.perf_counter()
    mask = oracle.mask
    levels = np.asarray(levels, dtype=float)
    if levels.size < 2 or np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be strictly increasing with at least two entries")
    if levels[0] < sigma_floor:
        raise ValueError("levels must not drop below the coefficient floor")
    datums = [f if isinstance(f, TraceDatum) else TraceDatum.from_field(f, mask) for f in probes]
    meas = [oracle.measure(d) for d in datums]
    eta_slack = oracle.eta if noise_slack is None else noise_slack
    slack_meas = [slack_factor * m.residual + eta_slack * abs(m.value) for m in meas]
    nb = len(blocks)
    sc = _Scanner(oracle, datums, meas, slack_meas, sigma_floor, min(sigma_floor, levels[0]), blocks)
    ledger = []
    per_eval = len(datums)

    def affordable():
        return budget is None or oracle.calls + sc.solves + per_eval <= budget

    def record(sweep, b, t, g, sl):
        nb_, na_ = _verdict(g, sl)
        verdict = "match" if nb_ and na_ else "below" if nb_ else "above" if na_ else "conflict"
        k = int(np.argmax(np.abs(g)))
        ledger.append({"sweep": sweep, "block": b, "level": float(t), "lower": float(g.min()),
                       "gap": float(g[k]), "upper": float(g.max()), "slack": float(sl.max()),
                       "verdict": verdict})

    # stage 1: anchor scan from the floor coefficient
    base = np.full(nb, float(sigma_floor))
    best = (np.inf, None, None)
    exhausted = False
    for b in range(nb):
        for t in levels:
            if not affordable():
                exhausted = True
                break
            vals = base.copy()
            vals[b] = t
            g, sl = sc.gaps(vals)
            record(0, b, t, g, sl)
            score = float(np.max(np.abs(g)))
            if score < best[0]:
                best = (score, b, t)
            if np.all(g <= -sl):
                break
        if exhausted:
            break
    est = base.copy()
    if best[1] is not None:
        est[best[1]] = best[2]

    lower = np.full(nb, np.nan)
    upper = np.full(nb, np.nan)
    scanned = set()
    open_ended = set()
    sweeps = 0
    for sweep in range(1, max_sweeps + 1):
        if exhausted:
            break
        sweeps += 1
        changed = False
        for b in range(nb):
            flags = {}

            def probe(i, b=b):
                if i not in flags:
                    if not affordable():
                        raise _Budget
                    vals = est.copy()
                    vals[b] = levels[i]
                    g, sl = sc.gaps(vals)
                    record(sweep, b, levels[i], g, sl)
                    flags[i] = _verdict(g, sl)
                return flags[i]

            i0 = int(np.argmin(np.abs(levels - est[b])))
            try:
                # largest level not ruled out from below
                if probe(i0)[0]:
                    lo = i0
                    while lo + 1 < levels.size and probe(lo + 1)[0]:
                        lo += 1
                else:
                    lo = i0 - 1
                    while lo >= 0 and not probe(lo)[0]:
                        lo -= 1
                # smallest level not ruled out from above
                if probe(i0)[1]:
                    hi = i0
                    while hi - 1 >= 0 and probe(hi - 1)[1]:
                        hi -= 1
                else:
                    hi = i0 + 1
                    while hi < levels.size and not probe(hi)[1]:
                        hi += 1
            except _Budget:
                exhausted = True
                break
            scanned.add(b)
            lo_t = levels[lo] if lo >= 0 else np.nan
            hi_t = levels[hi] if hi < levels.size else np.nan
            if np.isnan(lo_t) or np.isnan(hi_t):
                # the truth sits outside the level range on one side
                open_ended.add(b)
                lower[b] = levels[0] if np.isnan(lo_t) else levels[-1]
                upper[b] = lower[b]
                new = lower[b]
            else:
                open_ended.discard(b)
                lower[b], upper[b] = min(lo_t, hi_t), max(lo_t, hi_t)
                new = 0.5 * (lo_t + hi_t)
            if new != est[b]:
                changed = True
                est[b] = new
        if not changed:
            break
    inconclusive = sorted(open_ended | (set(range(nb)) - scanned))
    lower = np.where(np.isnan(lower), levels[0], lower)
    upper = np.where(np.isnan(upper), levels[-1], upper)
    return SigmaEstimate(lower, upper, est, inconclusive,
                         Field(mask.grid, sc.paint(est)[..., None]),
                         oracle.calls + sc.solves, sweeps, ledger, time.perf_counter() - t0)


def write_decision_ledger(estimate: SigmaEstimate, path) -> Path:
    """CSV with columns sweep, block, level, lower, gap, upper, slack, verdict."""
    path = Path(path)
    cols = ["sweep", "block", "level", "lower", "gap", "upper", "slack", "verdict"]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols)
        wr.writeheader()
        for row in estimate.ledger:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path
