"""
Exterior Dirichlet-to-Neumann map
=================================

The map sends exterior data f to the functional g -> energy pairing of the
exterior solution u_f with g.  Its basic properties can be read off from a
handful of forward solves.
"""
import numpy as np

from pbiharmonic import DnContext, DomainMask, GridSpec, TraceDatum, dn_matrix_linear, dn_pair
from pbiharmonic import quotient_independence_check
from pbiharmonic.dense import schur_dn_matrix
from pbiharmonic.inverse import bump_probes

grid = GridSpec(2, 32)
mask = DomainMask.box(grid, [-np.pi / 2] * 2, [np.pi / 2] * 2)
f, g = (TraceDatum.from_field(b, mask) for b in bump_probes(grid, mask.exterior, 2, seed=1))

# %%
# (p - 1)-homogeneity in the datum.
ctx = DnContext(mask, s=0.5, p=3.0)
base = dn_pair(ctx, f, g)
for t in (2.0, 4.0):
    print(f"t = {t}: pairing ratio {dn_pair(ctx, f * t, g) / base:.10f}, t^(p-1) = {t ** 2}")

# %%
# Adding interior values to the test datum changes nothing beyond the
# solver residual.
phi = np.zeros(grid.shape + (1,))
phi[mask.interior] = np.random.default_rng(2).standard_normal((mask.n_interior, 1))
chk = quotient_independence_check(ctx, f, g, grid.field(phi[..., 0]))
print(f"deviation {chk['deviation']:.2e} within slack {chk['slack']:.2e}: {chk['within']}")

# %%
# For p = 2 on a small grid the map is a symmetric matrix equal to a Schur
# complement of the grid operator.
small = GridSpec(2, 12)
smask = DomainMask.box(small, [-np.pi / 2] * 2, [np.pi / 2] * 2)
M, ext = dn_matrix_linear(DnContext(smask, 0.5, 2.0, tol=1e-12))
ref = schur_dn_matrix(small, smask.interior, 0.5)
print(f"{M.shape[0]} exterior points, asymmetry {np.abs(M - M.T).max():.1e}, "
      f"Schur difference {np.abs(M - ref).max() / np.abs(ref).max():.1e}")
