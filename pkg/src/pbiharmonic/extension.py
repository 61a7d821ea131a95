"""Caffarelli-Silvestre extension by generalized Poisson kernel convolution.

``P(x, y) = y^{2s} / (|x|^2 + y^2)^{(n+2s)/2}`` and ``U(., y) = C_{n,s} P(., y) * u``.
On the periodic grid the kernel is summed over periodic images (with a
closed-form tail), sampled and renormalized to unit quadrature mass, then
applied by FFT.  The weighted normal derivative
``-lim y^{1-2s} dU/dy`` is recovered by secant differences in ``t = y^{2s}``
extrapolated to ``y = 0`` with a least-squares fit in known powers of ``y``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .grid import Field, GridSpec, fractional_laplacian, lp_norm, save_field, load_field

__all__ = [
    "PoissonKernelSpec",
    "ExtensionSlices",
    "SupportWarning",
    "poisson_kernel",
    "kernel_lq_norm",
    "kernel_lq_norm_quad",
    "periodic_kernel",
    "extend",
    "default_heights",
    "pde_residual",
    "pde_residual_check",
    "kernel_derivative_constant",
    "normal_trace",
    "save_slices",
    "load_slices",
]


class SupportWarning(UserWarning):
    """The datum's support is too wide for the period to mimic the whole space."""


@dataclass(frozen=True)
class PoissonKernelSpec:
    """Dimension ``n`` and order ``s`` in (0, 1) of the generalized Poisson kernel."""

    n: int
    s: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 < self.s < 1:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")

    @property
    def omega(self) -> float:
        """Surface area ``2 pi^{n/2} / Gamma(n/2)`` of the unit sphere in ``R^n``."""
        return 2 * np.pi ** (self.n / 2) / special.gamma(self.n / 2)

    @property
    def C(self) -> float:
        """Normalization ``1 / ||P(., 1)||_1``."""
        return 1.0 / kernel_lq_norm(1.0, 1.0, self)


def poisson_kernel(x, y: float, spec: PoissonKernelSpec):
    """Evaluate ``P(x, y)``; ``x`` is a scalar (n=1) or an array whose last axis has length n."""
    if not y > 0:
        raise ValueError(f"height y must be positive, got {y}")
    x = np.asarray(x, dtype=float)
    r2 = x * x if spec.n == 1 else np.sum(x * x, axis=-1)
    return y ** (2 * spec.s) / (r2 + y * y) ** ((spec.n + 2 * spec.s) / 2)


def kernel_lq_norm(y: float, q: float, spec: PoissonKernelSpec) -> float:
    """Closed form of ``||P(., y)||_q`` through the Euler Beta function.

    ``((omega_n / 2) y^{n(1-q)} B(n/2, n(q-1)/2 + s q))^{1/q}``.
    """
    if not y > 0:
        raise ValueError(f"height y must be positive, got {y}")
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    n, s = spec.n, spec.s
    b = n * (q - 1) / 2 + s * q
    if b <= 0:
        raise ValueError(f"Beta argument {b} is not positive")
    return (0.5 * spec.omega * y ** (n * (1 - q)) * special.beta(n / 2, b)) ** (1.0 / q)


def kernel_lq_norm_quad(y: float, q: float, spec: PoissonKernelSpec) -> float:
    """``||P(., y)||_q`` by adaptive radial quadrature (independent of the Beta form)."""
    n, s = spec.n, spec.s

    def f(r):
        return r ** (n - 1) * (y ** (2 * s) / (r * r + y * y) ** ((n + 2 * s) / 2)) ** q

    a, _ = integrate.quad(f, 0, y, epsabs=0, epsrel=1e-13, limit=200)
    b, _ = integrate.quad(f, y, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    return (spec.omega * (a + b)) ** (1.0 / q)


def periodic_kernel(grid: GridSpec, y: float, s: float, images: int = 8) -> np.ndarray:
    """Kernel summed over periodic images, on the FFT offset layout (index 0 is x = 0).

    In 1-d the images beyond ``images`` periods are added exactly with Hurwitz
    zeta functions; in 2-d their sum is replaced by its value at ``x = 0``.
    Not normalized.
    """
    n, L = grid.n, grid.L
    off = grid.h * np.fft.fftfreq(grid.N, 1.0 / grid.N)
    a = n + 2 * s
    J = images
    if n == 1:
        tot = np.zeros(grid.N)
        for j in range(-J, J + 1):
            z = off + j * L
            tot += y ** (2 * s) / (z * z + y * y) ** (a / 2)
        tot += y ** (2 * s) * L ** (-a) * (special.zeta(a, J + 1 + off / L)
                                           + special.zeta(a, J + 1 - off / L))
        return tot
    X, Y = np.meshgrid(off, off, indexing="ij")
    tot = np.zeros(grid.shape)
    for i in range(-J, J + 1):
        for j in range(-J, J + 1):
            tot += y ** (2 * s) / ((X + i * L) ** 2 + (Y + j * L) ** 2 + y * y) ** (a / 2)
    far = 40 * J
    k = np.arange(-far, far + 1)
    KI, KJ = np.meshgrid(k, k, indexing="ij")
    ring = np.maximum(np.abs(KI), np.abs(KJ)) > J
    r2 = (KI[ring] ** 2 + KJ[ring] ** 2) * L * L
    tail = np.sum(r2 ** (-a / 2))
    # lattice sum beyond the far square, replaced by its integral
    tail += 2 * np.pi / (2 * s) * (far * L) ** (-2 * s) / (L * L)
    return tot + y ** (2 * s) * tail


@dataclass(frozen=True, eq=False)
class ExtensionSlices:
    """Extension values ``U(., y_j)`` at increasing heights ``y_j``.

    ``support_ratio`` is ``L / diam(supp u)``; values below 8 were warned about.
    """

    base: Field
    heights: np.ndarray
    slices: tuple
    s: float
    support_ratio: float

    def slice_at(self, j: int) -> Field:
        return self.slices[j]

    def contraction(self, p: float) -> np.ndarray:
        """``||U(., y_j)||_p / ||u||_p`` per height."""
        ref = lp_norm(self.base, p)
        return np.array([lp_norm(U, p) / ref for U in self.slices])


def _support_ratio(u: Field) -> float:
    vals = np.max(np.abs(u.values), axis=-1)
    big = vals > 1e-12 * max(vals.max(), 1e-300)
    if not big.any():
        return np.inf
    diam = 0.0
    for ax in range(u.grid.n):
        idx = np.flatnonzero(big.any(axis=tuple(a for a in range(u.grid.n) if a != ax)))
        diam = max(diam, (idx.max() - idx.min() + 1) * u.grid.h)
    return u.grid.L / diam


def default_heights(grid: GridSpec, levels: int = 8, ratio: float = 0.7,
                    y_min: float | None = None) -> np.ndarray:
    """Increasing geometric heights ending at ``y_min`` (default ``2.5 h``) from below."""
    y_min = 2.5 * grid.h if y_min is None else y_min
    return y_min * ratio ** (-np.arange(levels, dtype=float))


def extend(u: Field, heights, spec: PoissonKernelSpec | float, images: int = 8) -> ExtensionSlices:
    """Evaluate the extension of scalar ``u`` at the given heights.

    The sampled periodic kernel is rescaled so its grid quadrature equals 1,
    making every slice a weighted average of ``u``.
    """
    s = spec.s if isinstance(spec, PoissonKernelSpec) else float(spec)
    if not 0 < s < 1:
        raise ValueError(f"extension order s must lie in (0, 1), got {s}")
    if u.m != 1:
        raise ValueError("extension is implemented for scalar fields")
    grid = u.grid
    heights = np.sort(np.asarray(heights, dtype=float))
    if heights.size == 0 or heights[0] <= 0 or np.any(np.diff(heights) <= 0):
        raise ValueError("heights must be distinct and positive")
    ratio = _support_ratio(u)
    if ratio < 8:
        warnings.warn(f"period is only {ratio:.2f} times the support diameter", SupportWarning,
                      stacklevel=2)
    axes = tuple(range(grid.n))
    uhat = np.fft.rfftn(u.values[..., 0], axes=axes)
    out = []
    for y in heights:
        k = periodic_kernel(grid, y, s, images)
        k /= k.sum()
        khat = np.fft.rfftn(k, axes=axes)
        out.append(Field(grid, np.fft.irfftn(uhat * khat, s=grid.shape, axes=axes)[..., None]))
    return ExtensionSlices(u, heights, tuple(out), s, ratio)


def pde_residual(spec: PoissonKernelSpec, x, y: float, h: float) -> float:
    """Relative central-difference residual of ``Delta P + ((1-2s)/y) dP/dy`` at ``(x, y)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != spec.n:
        raise ValueError(f"point needs {spec.n} coordinates")
    if not y > h:
        raise ValueError("y must exceed the step h")
    P0 = poisson_kernel(x, y, spec)
    Pu, Pd = poisson_kernel(x, y + h, spec), poisson_kernel(x, y - h, spec)
    lap = (Pu - 2 * P0 + Pd) / h ** 2
    for i in range(spec.n):
        e = np.zeros(spec.n)
        e[i] = h
        lap += (poisson_kernel(x + e, y, spec) - 2 * P0 + poisson_kernel(x - e, y, spec)) / h ** 2
    dy = (Pu - Pd) / (2 * h)
    return float(np.squeeze(np.abs(lap + (1 - 2 * spec.s) / y * dy) / P0))


def pde_residual_check(spec: PoissonKernelSpec, points, h: float = 1e-3) -> dict:
    """Max relative residual at ``points`` (pairs ``(x, y)``) for steps ``h`` and ``h/2``.

    ``order`` is the observed convergence order ``log2(r(h) / r(h/2))``.
    """
    r1 = max(pde_residual(spec, x, y, h) for x, y in points)
    r2 = max(pde_residual(spec, x, y, h / 2) for x, y in points)
    return {"residual": r1, "residual_half": r2, "ratio": r1 / r2,
            "order": float(np.log2(r1 / r2))}


def kernel_derivative_constant(spec: PoissonKernelSpec, samples: int = 2000, seed: int = 0) -> float:
    """Fitted ``C_1`` with ``|dP/dy| <= C_1 y^{2s-1} / (|x|^2+y^2)^{(n+2s)/2}`` at random points.

    ``dP/dy`` is taken by complex-step differentiation, independent of the
    analytic derivative.
    """
    rng = np.random.default_rng(seed)
    n, s = spec.n, spec.s
    x = rng.standard_normal((samples, n)) * np.exp(rng.uniform(-3, 3, (samples, 1)))
    y = np.exp(rng.uniform(-4, 3, samples))
    r2 = np.sum(x * x, axis=1)
    step = 1e-20 * y
    yc = y + 1j * step
    dP = np.imag(yc ** (2 * s) / (r2 + yc * yc) ** ((n + 2 * s) / 2)) / step
    bound = y ** (2 * s - 1) / (r2 + y * y) ** ((n + 2 * s) / 2)
    return float(np.max(np.abs(dP) / bound))


_TRACE_EXPONENTS = (2.0, 4.0, 6.0)


def normal_trace(slices: ExtensionSlices, spec: PoissonKernelSpec | None = None,
                 terms: int = 5, return_info: bool = False):
    """Weighted normal derivative at ``y = 0`` and its calibration constant.

    Secants ``-2s (U_j - U_{j+1}) / (y_j^{2s} - y_{j+1}^{2s})`` approximate
    ``-y^{1-2s} dU/dy`` at the midpoints; a least-squares fit in
    ``1, y^{2-2s}, y^2, y^{4-2s}, y^4, ...`` (``terms`` powers after the
    constant) extrapolates to ``y = 0``.  The calibration ``c`` minimizes
    ``||c T - (-Delta)^s u||_2``.

    Returns ``(trace, c)``, or ``(trace, c, info)`` with the relative
    calibrated error and a data-inferred leading exponent.
    """
    s = slices.s if spec is None else spec.s
    ys = np.asarray(slices.heights)[::-1]
    if ys.size < 4:
        raise ValueError("normal trace needs at least 4 heights")
    r = ys[1:] / ys[:-1]
    if np.ptp(r) > 1e-9 * r.mean():
        raise ValueError("heights must form a geometric sequence")
    U = np.array([f.values[..., 0] for f in slices.slices])[::-1]
    t = ys ** (2 * s)
    T = np.array([-2 * s * (U[j] - U[j + 1]) / (t[j] - t[j + 1]) for j in range(ys.size - 1)])
    yy = ys[:-1]
    exps = sorted({e - 2 * s for e in _TRACE_EXPONENTS} | set(_TRACE_EXPONENTS))
    exps = exps[:min(terms, T.shape[0] - 2)]
    M = np.column_stack([np.ones_like(yy)] + [yy ** e for e in exps])
    coef, *_ = np.linalg.lstsq(M, T.reshape(T.shape[0], -1), rcond=None)
    trace = coef[0].reshape(U.shape[1:])
    ref = fractional_laplacian(slices.base, s, full=True).values[..., 0]
    denom = float(np.sum(trace * trace))
    c = float(np.sum(trace * ref) / denom) if denom > 0 else 0.0
    field = Field(slices.base.grid, trace[..., None])
    if not return_info:
        return field, c
    d1 = np.linalg.norm(T[-2] - T[-3])
    d2 = np.linalg.norm(T[-1] - T[-2])
    rho = ys[-1] / ys[-2]
    exponent = float(np.log(d1 / d2) / np.log(1 / rho)) if d1 > 0 and d2 > 0 else float("nan")
    nref = np.linalg.norm(ref)
    err = float(np.linalg.norm(c * trace - ref) / nref) if nref > 0 else 0.0
    return field, c, {"relative_error": err, "leading_exponent": exponent, "exponents": exps}


def save_slices(slices: ExtensionSlices, directory) -> Path:
    """Write ``slices.bin`` (heights stacked as components) and ``heights.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stack = np.concatenate([f.values for f in slices.slices], axis=-1)
    save_field(Field(slices.base.grid, stack), d / "slices.bin")
    save_field(slices.base, d / "base.bin")
    (d / "heights.json").write_text(json.dumps({"s": slices.s, "heights": list(map(float, slices.heights)),
                                               "support_ratio": slices.support_ratio}, indent=2))
    return d


def load_slices(directory) -> ExtensionSlices:
    d = Path(directory)
    meta = json.loads((d / "heights.json").read_text())
    stack = load_field(d / "slices.bin")
    base = load_field(d / "base.bin")
    sl = tuple(Field(stack.grid, stack.values[..., j:j + 1]) for j in range(stack.m))
    return ExtensionSlices(base, np.array(meta["heights"]), sl, meta["s"], meta["support_ratio"])
