import numpy as np
import pytest

from pbiharmonic import DomainMask, GridSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid1d():
    return GridSpec(1, 64)


@pytest.fixture
def grid2d():
    return GridSpec(2, 16)


def central_mask(grid, frac=0.5):
    half = frac * grid.L / 2
    return DomainMask.box(grid, [-half] * grid.n, [half] * grid.n)


def smooth_field(grid, rng, modes=3, m=1):
    """Random band-limited field built from a few low Fourier modes."""
    X = grid.coords()
    out = np.zeros(grid.shape + (m,))
    for c in range(m):
        for _ in range(modes):
            k = rng.integers(-3, 4, size=grid.n)
            phase = rng.uniform(0, 2 * np.pi)
            out[..., c] += rng.standard_normal() * np.cos(sum(ki * xi for ki, xi in zip(k, X)) + phase)
    return out
