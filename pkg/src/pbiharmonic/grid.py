"""Periodic grids, sampled fields and Fourier multipliers.

All transforms act on the last ``n`` spatial axes of an array shaped
``grid.shape + (m,)``.  The torus ``[-L/2, L/2)^n`` stands in for the
whole space; data of interest should sit well inside one period.
"""
from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "GridSpec",
    "Field",
    "fractional_laplacian",
    "bessel_potential",
    "lp_norm",
    "hsp_norm",
    "inner",
    "save_field",
    "load_field",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid with ``N`` samples per axis on ``[-L/2, L/2)^n``."""

    n: int
    N: int
    L: float = 2 * np.pi

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"dimension n must be 1 or 2, got {self.n}")
        if self.N < 4 or self.N % 2:
            raise ValueError(f"N must be even and >= 4, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"period L must be positive, got {self.L}")
        object.__setattr__(self, "L", float(self.L))

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def cellvol(self) -> float:
        return self.h ** self.n

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N ** self.n

    def axis(self) -> np.ndarray:
        return -self.L / 2 + self.h * np.arange(self.N)

    def coords(self) -> tuple:
        """Meshgrid of point coordinates, ``ij`` indexing."""
        ax = self.axis()
        return tuple(np.meshgrid(*([ax] * self.n), indexing="ij"))

    def frequencies(self) -> np.ndarray:
        """Integer-lattice frequencies ``2 pi k / L``, ``k`` in ``[-N/2, N/2)``."""
        return 2 * np.pi * np.fft.fftfreq(self.N, d=self.h)

    def abs_xi(self) -> np.ndarray:
        """``|xi|`` on the half-spectrum layout used by ``rfftn``."""
        return _abs_xi(self)

    def field(self, values, m: int | None = None) -> "Field":
        return Field.from_array(self, values, m)

    def zeros(self, m: int = 1) -> "Field":
        return Field(self, np.zeros(self.shape + (m,)))


@functools.lru_cache(maxsize=64)
def _abs_xi(grid: GridSpec) -> np.ndarray:
    full = 2 * np.pi * np.fft.fftfreq(grid.N, d=grid.h)
    half = 2 * np.pi * np.fft.rfftfreq(grid.N, d=grid.h)
    axes = [full] * (grid.n - 1) + [half]
    mesh = np.meshgrid(*axes, indexing="ij")
    out = np.sqrt(sum(k * k for k in mesh))
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=256)
def _symbol(grid: GridSpec, kind: str, order: float) -> np.ndarray:
    xi = _abs_xi(grid)
    if kind == "riesz":
        with np.errstate(divide="ignore"):
            sym = np.where(xi > 0, xi ** order, 0.0) if order > 0 else np.ones_like(xi)
    else:
        sym = (1.0 + xi * xi) ** (order / 2)
    sym.setflags(write=False)
    return sym


def apply_multiplier(grid: GridSpec, values: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Apply a real radial multiplier to an array shaped ``grid.shape + (m,)``."""
    axes = tuple(range(grid.n))
    hat = np.fft.rfftn(values, axes=axes)
    hat *= symbol[..., None]
    return np.fft.irfftn(hat, s=grid.shape, axes=axes)


def riesz(grid: GridSpec, values: np.ndarray, order: float) -> np.ndarray:
    """Array-level ``|xi|^order`` multiplier; zero frequency maps to 0 for order > 0."""
    if order == 0:
        return np.array(values, dtype=float, copy=True)
    return apply_multiplier(grid, values, _symbol(grid, "riesz", float(order)))


@dataclass(frozen=True, eq=False)
class Field:
    """An ``m``-component real function sampled on a grid.

    ``values`` has shape ``grid.shape + (m,)``; :attr:`flat` gives the
    point-major, component-minor ``(N**n, m)`` view used for I/O.
    """

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[:-1] != self.grid.shape or vals.ndim != self.grid.n + 1:
            raise ValueError(
                f"values of shape {vals.shape} do not match grid {self.grid.shape} + (m,)"
            )
        if vals.shape[-1] < 1:
            raise ValueError("component count m must be >= 1")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field has non-finite entries")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_array(cls, grid: GridSpec, values, m: int | None = None) -> "Field":
        """Accept ``grid.shape``, ``grid.shape + (m,)`` or flat ``(N**n, m)`` input."""
        vals = np.asarray(values, dtype=float)
        if vals.shape == grid.shape:
            vals = vals[..., None]
        elif vals.ndim == 2 and vals.shape[0] == grid.size and grid.n > 1:
            vals = vals.reshape(grid.shape + (vals.shape[1],))
        if m is not None and vals.shape[-1] != m:
            raise ValueError(f"expected {m} components, got {vals.shape[-1]}")
        return cls(grid, vals)

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(self.grid.size, self.m)

    def with_values(self, values) -> "Field":
        return Field(self.grid, np.asarray(values, dtype=float).reshape(self.values.shape))

    def __add__(self, other: "Field") -> "Field":
        _check_same(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _check_same(self, other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, t: float) -> "Field":
        return Field(self.grid, self.values * float(t))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)


def _check_same(u: Field, v: Field):
    if u.grid != v.grid:
        raise ValueError(f"grid mismatch: {u.grid} vs {v.grid}")
    if u.m != v.m:
        raise ValueError(f"component mismatch: {u.m} vs {v.m}")


def fractional_laplacian(u: Field, s: float, full: bool = False) -> Field:
    """Return ``(-Delta)^{s/2} u``, or ``(-Delta)^s u`` when ``full`` is set.

    The symbol is ``|xi|^s`` (``|xi|^{2s}`` for full order); the zero
    frequency is mapped to 0 for positive order, so constants are
    annihilated.
    """
    if s < 0:
        raise ValueError(f"order s must be nonnegative, got {s}")
    order = 2 * s if full else s
    return Field(u.grid, riesz(u.grid, u.values, order))


def bessel_potential(u: Field, s: float) -> Field:
    """Return ``<D>^s u`` with symbol ``(1 + |xi|^2)^{s/2}``."""
    if s == 0:
        return Field(u.grid, u.values.copy())
    return Field(u.grid, apply_multiplier(u.grid, u.values, _symbol(u.grid, "bessel", float(s))))


def _lp(grid: GridSpec, values: np.ndarray, p: float) -> float:
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    top = float(np.abs(values).max(initial=0.0))
    if top == 0.0 or not np.isfinite(top):
        return top
    # scaling by the largest entry keeps the powers clear of under- and overflow
    mag = np.sqrt(np.sum((values / top) ** 2, axis=-1))
    return top * float(np.sum(mag ** p) * grid.cellvol) ** (1.0 / p)


def lp_norm(u: Field, p: float) -> float:
    """Discrete ``L^p`` norm with pointwise Euclidean magnitude and cell volume ``h^n``."""
    return _lp(u.grid, u.values, p)


def hsp_norm(u: Field, s: float, p: float) -> float:
    """Bessel potential norm ``||<D>^s u||_p``."""
    return lp_norm(bessel_potential(u, s), p)


def inner(u: Field, v: Field) -> float:
    """Grid quadrature of ``u . v``."""
    _check_same(u, v)
    return float(np.sum(u.values * v.values) * u.grid.cellvol)


# --- serialization ---------------------------------------------------------

_MAGIC = b"PBHF"
_HEADER = struct.Struct("<4siidi")


def save_field(u: Field, path) -> Path:
    """Write ``u`` as CSV (``.csv``) or little-endian binary (anything else).

    Both layouts carry the header ``(n, N, L, m)`` followed by point-major,
    component-minor values.
    """
    path = Path(path)
    g = u.grid
    if path.suffix == ".csv":
        with open(path, "w") as fh:
            fh.write("n,N,L,m\n")
            fh.write(f"{g.n},{g.N},{g.L!r},{u.m}\n")
            np.savetxt(fh, u.flat, delimiter=",", fmt="%.17g")
    else:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, g.n, g.N, g.L, u.m))
            fh.write(np.ascontiguousarray(u.flat, dtype="<f8").tobytes())
    return path


def load_field(path) -> Field:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path) as fh:
            fh.readline()
            n, N, L, m = fh.readline().strip().split(",")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        grid = GridSpec(int(n), int(N), float(L))
        m = int(m)
    else:
        raw = path.read_bytes()
        magic, n, N, L, m = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a field file")
        grid = GridSpec(n, N, L)
        data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    data = np.asarray(data, dtype=float).reshape(grid.size, m)
    return Field(grid, data.reshape(grid.shape + (m,)))
