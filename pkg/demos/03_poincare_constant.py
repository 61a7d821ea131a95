"""
The optimal Poincare constant
=============================

The smallest value of ||(-Delta)^{s/2} u||_p^p over unit-norm fields
supported in a domain is the first eigenvalue; its -1/p power is the best
constant in the Poincare inequality.
"""
import numpy as np

from pbiharmonic import DomainMask, GridSpec, lp_norm, poincare_eigenpair
from pbiharmonic.dense import dirichlet_eigenpairs
from pbiharmonic.grid import fractional_laplacian

grid = GridSpec(1, 64)
mask = DomainMask.box(grid, -np.pi / 2, np.pi / 2)

# %%
# For p = 2 the answer is the lowest eigenvalue of the restricted matrix.
res = poincare_eigenpair(mask, s=0.5, p=2.0, tol=1e-10)
dense, _ = dirichlet_eigenpairs(grid, mask.interior, 0.5, k=1)
print(f"lambda1 = {res.lambda1:.12f}, dense = {dense[0]:.12f}")

# %%
# Other exponents, with the Euler-Lagrange residual of each minimizer and
# the distinct limits reached by the restarts.
for p in (1.5, 3.0, 4.0):
    r = poincare_eigenpair(mask, 0.5, p, restarts=3)
    print(f"p = {p}: lambda1 = {r.lambda1:.8f}, C* = {r.c_star:.6f}, "
          f"EL residual {r.el_residual:.1e}, limits {len(r.limits)}")

# %%
# Random interior fields never beat the constant.
rng = np.random.default_rng(0)
worst = 0.0
for _ in range(200):
    v = np.zeros(grid.shape + (1,))
    v[mask.interior] = rng.standard_normal((mask.n_interior, 1))
    u = grid.field(v)
    worst = max(worst, lp_norm(u, 2.0) / lp_norm(fractional_laplacian(u, 0.5), 2.0))
print(f"largest ratio over 200 random fields {worst:.6f} <= C* = {res.c_star:.6f}")
