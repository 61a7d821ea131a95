"""
Fractional operators on a periodic grid
=======================================

Fourier multipliers act exactly on trigonometric polynomials, which makes
them easy to sanity-check by hand before trusting them on rough data.
"""
import numpy as np

from pbiharmonic import GridSpec, bessel_potential, fractional_laplacian, hsp_norm, lp_norm

# %%
# A 1-d grid of period 2 pi.  ``fractional_laplacian(u, s)`` applies the
# half-order operator with symbol |xi|^s; ``full=True`` applies |xi|^{2s}.
grid = GridSpec(n=1, N=64)
(x,) = grid.coords()
u = grid.field(np.cos(3 * x))

half = fractional_laplacian(u, 0.7)
full = fractional_laplacian(u, 0.7, full=True)
print("half order, max |out - 3^0.7 u| :", np.abs(half.values[..., 0] - 3 ** 0.7 * np.cos(3 * x)).max())
print("full order, max |out - 3^1.4 u| :", np.abs(full.values[..., 0] - 3 ** 1.4 * np.cos(3 * x)).max())

# %%
# Constants sit at the zero frequency, where |xi|^s vanishes and the
# Bessel symbol (1 + |xi|^2)^{s/2} equals one.
c = grid.field(np.full(grid.shape, 2.0))
print("Riesz of a constant :", np.abs(fractional_laplacian(c, 0.5).values).max())
print("Bessel of a constant:", bessel_potential(c, 1.5).values[0, 0])

# %%
# Norms use the cell volume h^n as quadrature weight, so the L^2 norm of
# cos(x) over one period is sqrt(pi).
print("||cos||_2 =", lp_norm(grid.field(np.cos(x)), 2.0), " sqrt(pi) =", np.sqrt(np.pi))
print("H^{1,3} norm of a bump:", hsp_norm(grid.field(np.exp(-x ** 2)), 1.0, 3.0))
