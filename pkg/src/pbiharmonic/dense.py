"""Dense matrix oracles for the linear (``p = 2``, isotropic) case.

The full-grid matrix of ``(-Delta)^s`` is assembled from an explicit DFT
matrix, independent of the FFT code path used by the solvers.  Sizes are
limited to a few thousand grid points.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg

from .grid import GridSpec

__all__ = [
    "laplacian_matrix",
    "interior_source_oracle",
    "exterior_value_oracle",
    "schur_dn_matrix",
    "dirichlet_eigenpairs",
]


def laplacian_matrix(grid: GridSpec, s: float) -> np.ndarray:
    """Matrix of ``(-Delta)^s`` acting on point-major flattened scalar fields."""
    if grid.size > 4096:
        raise ValueError(f"dense oracle limited to 4096 points, grid has {grid.size}")
    N = grid.N
    j = np.arange(N)
    W = np.exp(-2j * np.pi * np.outer(j, j) / N)
    k = 2 * np.pi * np.fft.fftfreq(N, d=grid.h)
    if grid.n == 1:
        xi = np.abs(k)
    else:
        W = np.kron(W, W)
        KX, KY = np.meshgrid(k, k, indexing="ij")
        xi = np.sqrt(KX * KX + KY * KY).ravel()
    sym = np.where(xi > 0, xi ** (2 * s), 0.0)
    K = np.real(W.conj().T @ (sym[:, None] * W)) / grid.size
    return 0.5 * (K + K.T)


def _split(interior: np.ndarray):
    flat = np.asarray(interior, dtype=bool).ravel()
    return np.flatnonzero(flat), np.flatnonzero(~flat)


def interior_source_oracle(grid: GridSpec, interior, s: float, F: np.ndarray) -> np.ndarray:
    """Solve ``K_II u_I = F_I`` and return the zero-extended scalar field."""
    I, _ = _split(interior)
    K = laplacian_matrix(grid, s)
    u = np.zeros(grid.size)
    u[I] = linalg.solve(K[np.ix_(I, I)], np.ravel(F)[I], assume_a="pos")
    return u.reshape(grid.shape)


def exterior_value_oracle(grid: GridSpec, interior, s: float, u0: np.ndarray) -> np.ndarray:
    """Solve ``K_II u_I = -K_IE u0_E`` and return the full scalar field."""
    I, E = _split(interior)
    K = laplacian_matrix(grid, s)
    u = np.ravel(u0).astype(float).copy()
    u[I] = linalg.solve(K[np.ix_(I, I)], -K[np.ix_(I, E)] @ u[E], assume_a="pos")
    return u.reshape(grid.shape)


def schur_dn_matrix(grid: GridSpec, interior, s: float) -> np.ndarray:
    """``h^n (K_EE - K_EI K_II^{-1} K_IE)``: the linear DN pairing on exterior unit data."""
    I, E = _split(interior)
    K = laplacian_matrix(grid, s)
    X = linalg.solve(K[np.ix_(I, I)], K[np.ix_(I, E)], assume_a="pos")
    S = K[np.ix_(E, E)] - K[np.ix_(E, I)] @ X
    return grid.cellvol * 0.5 * (S + S.T)


def dirichlet_eigenpairs(grid: GridSpec, interior, s: float, k: int = 2):
    """Lowest ``k`` eigenpairs of the interior block ``K_II``.

    Eigenvectors are returned as zero-extended fields of shape ``(k,) + grid.shape``.
    """
    I, _ = _split(interior)
    K = laplacian_matrix(grid, s)
    vals, vecs = linalg.eigh(K[np.ix_(I, I)], subset_by_index=[0, k - 1])
    out = np.zeros((k, grid.size))
    out[:, I] = vecs.T
    return vals, out.reshape((k,) + grid.shape)
