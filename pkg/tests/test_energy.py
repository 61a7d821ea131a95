import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pbiharmonic import (CP_FIT, AnisotropyField, ConformalCoefficient, Field, GridSpec,
                         apply_operator, bessel_potential, fit_monotonicity_constant,
                         fractional_laplacian, inner, lp_norm, matrix_sqrt_field, p_energy,
                         vector_monotonicity_gap, weak_pairing)

from conftest import smooth_field


def _random_spd_field(grid, rng, m=2):
    B = rng.standard_normal(grid.shape + (m, m))
    return np.einsum("...ik,...jk->...ij", B, B) + 0.5 * np.eye(m)


def test_sqrt_of_scaled_identity():
    g = GridSpec(1, 8)
    A = AnisotropyField.constant(g, 4 * np.eye(2))
    np.testing.assert_allclose(A.sqrt, np.broadcast_to(2 * np.eye(2), g.shape + (2, 2)))
    assert A.lam == pytest.approx(2) and A.Lam == pytest.approx(2)


def test_sqrt_of_diagonal():
    g = GridSpec(1, 8)
    A = AnisotropyField.diagonal(g, [1.0, 9.0])
    np.testing.assert_allclose(A.sqrt[0], np.diag([1.0, 3.0]), atol=1e-15)
    assert (A.lam, A.Lam) == pytest.approx((1.0, 3.0))


def test_sqrt_squares_back(rng):
    g = GridSpec(2, 8)
    raw = _random_spd_field(g, rng, m=3)
    A = matrix_sqrt_field(g, raw)
    np.testing.assert_allclose(A.sqrt @ A.sqrt, raw, atol=1e-10)
    evals = np.linalg.eigvalsh(raw)
    assert A.lam ** 2 == pytest.approx(evals.min()) and A.Lam ** 2 == pytest.approx(evals.max())


def test_nonsymmetric_and_indefinite_rejected():
    g = GridSpec(1, 4)
    raw = np.broadcast_to(np.eye(2), g.shape + (2, 2)).copy()
    raw[2, 0, 1] = 0.5
    with pytest.raises(ValueError, match=r"\(2,\)"):
        matrix_sqrt_field(g, raw)
    raw = np.broadcast_to(np.eye(2), g.shape + (2, 2)).copy()
    raw[3, 1, 1] = -1.0
    with pytest.raises(ValueError, match="positive definite"):
        matrix_sqrt_field(g, raw)


def test_conformal_floor_enforced():
    g = GridSpec(1, 8)
    with pytest.raises(ValueError):
        ConformalCoefficient(g, np.full(g.shape, 0.5), 1.0)
    assert (ConformalCoefficient.constant(g, 2.0) * 3).floor == 6.0


def test_energy_of_unit_cosine():
    g = GridSpec(1, 64)
    (x,) = g.coords()
    u = g.field(np.cos(x))
    for s in (0.3, 0.5, 1.7):
        assert p_energy(u, None, s, 2.0) == pytest.approx(np.pi / 2, rel=1e-13)


def test_energy_scales_with_anisotropy(grid2d, rng):
    u = Field(grid2d, smooth_field(grid2d, rng, m=2))
    A = matrix_sqrt_field(grid2d, _random_spd_field(grid2d, rng))
    A4 = matrix_sqrt_field(grid2d, 4 * A.matrices)
    for p in (1.5, 3.0):
        assert p_energy(u, A4, 0.6, p) == pytest.approx(2 ** p * p_energy(u, A, 0.6, p), rel=1e-12)


def test_p2_energy_plancherel(grid2d, rng):
    v = rng.standard_normal(grid2d.shape)
    u = grid2d.field(v)
    s = 0.7
    hat = np.fft.fftn(v)
    kx, ky = np.meshgrid(grid2d.frequencies(), grid2d.frequencies(), indexing="ij")
    spectral = 0.5 * np.sum((kx ** 2 + ky ** 2) ** s * np.abs(hat) ** 2) / grid2d.size * grid2d.cellvol
    assert p_energy(u, None, s, 2.0) == pytest.approx(spectral, rel=1e-12)


def test_exponent_guards(grid1d):
    u = grid1d.zeros()
    with pytest.raises(ValueError):
        p_energy(u, None, 0.5, 1.0)
    with pytest.raises(ValueError):
        p_energy(u, None, 0.0, 2.0)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_pairing_with_self_is_p_energy(grid2d, rng, p):
    u = grid2d.field(smooth_field(grid2d, rng))
    assert weak_pairing(u, u, None, 0.5, p) == pytest.approx(p * p_energy(u, None, 0.5, p), rel=1e-12)


def test_p2_pairing_is_l2_of_half_powers(grid2d, rng):
    u = grid2d.field(rng.standard_normal(grid2d.shape))
    v = grid2d.field(rng.standard_normal(grid2d.shape))
    expected = inner(fractional_laplacian(u, 0.8), fractional_laplacian(v, 0.8))
    assert weak_pairing(u, v, None, 0.8, 2.0) == pytest.approx(expected, rel=1e-12)


def test_pairing_bound_on_random_pairs(grid2d, rng):
    """Hoelder form of the boundedness estimate, plus the empirical constant."""
    ratios = []
    for k in range(50):
        p = (1.5, 2.0, 3.0)[k % 3]
        A = matrix_sqrt_field(grid2d, _random_spd_field(grid2d, rng))
        u = Field(grid2d, smooth_field(grid2d, rng, m=2))
        v = Field(grid2d, smooth_field(grid2d, rng, m=2))
        pair = abs(weak_pairing(u, v, A, 0.5, p))
        wu = lp_norm(fractional_laplacian(u, 0.5), p)
        wv = lp_norm(fractional_laplacian(v, 0.5), p)
        assert pair <= A.Lam ** p * wu ** (p - 1) * wv * (1 + 1e-12)
        ratios.append(pair / (A.Lam ** p * wu ** (p - 1) * lp_norm(bessel_potential(v, 0.5), p)))
    assert np.isfinite(max(ratios)) and max(ratios) <= 1.0


def test_operator_p2_is_full_order_laplacian(grid2d, rng):
    u = grid2d.field(rng.standard_normal(grid2d.shape))
    np.testing.assert_allclose(apply_operator(u, None, 0.6, 2.0).values,
                               fractional_laplacian(u, 0.6, full=True).values, atol=1e-12)


def test_operator_zero_and_homogeneity(grid2d, rng):
    assert not apply_operator(grid2d.zeros(), None, 0.5, 1.5).values.any()
    u = grid2d.field(smooth_field(grid2d, rng))
    for p in (1.5, 3.0):
        a = apply_operator(u * 2.5, None, 0.5, p).values
        b = 2.5 ** (p - 1) * apply_operator(u, None, 0.5, p).values
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12 * np.abs(b).max())


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
def test_strong_weak_transfer(grid2d, rng, p):
    A = matrix_sqrt_field(grid2d, _random_spd_field(grid2d, rng))
    u = Field(grid2d, smooth_field(grid2d, rng, m=2))
    v = Field(grid2d, rng.standard_normal(grid2d.shape + (2,)))
    strong = inner(apply_operator(u, A, 0.4, p), v)
    assert strong == pytest.approx(weak_pairing(u, v, A, 0.4, p), rel=1e-10)


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
def test_gradient_finite_difference(grid2d, rng, p):
    for _ in range(10):
        u = grid2d.field(smooth_field(grid2d, rng))
        d = grid2d.field(rng.standard_normal(grid2d.shape))
        h = 1e-5
        fd = (p_energy(u + d * h, None, 0.5, p) - p_energy(u - d * h, None, 0.5, p)) / (2 * h)
        assert fd == pytest.approx(weak_pairing(u, d, None, 0.5, p), rel=1e-6)


def test_regularized_gradient_below_two(grid2d, rng):
    u = grid2d.field(smooth_field(grid2d, rng))
    d = grid2d.field(rng.standard_normal(grid2d.shape))
    h, eps = 1e-5, 1e-2
    fd = (p_energy(u + d * h, None, 0.5, 1.5, eps=eps) - p_energy(u - d * h, None, 0.5, 1.5, eps=eps)) / (2 * h)
    assert fd == pytest.approx(weak_pairing(u, d, None, 0.5, 1.5, eps=eps), rel=1e-6)


def test_vector_gap_examples():
    assert vector_monotonicity_gap([1.0, -2.0], [1.0, -2.0], 3.0) == (0.0, 0.0)
    assert vector_monotonicity_gap([0.0], [0.0], 1.5) == (0.0, 0.0)
    lhs, rhs = vector_monotonicity_gap([3.0, 1.0], [-1.0, 2.0], 2.0)
    assert lhs == pytest.approx(17.0) and rhs == pytest.approx(17.0)
    lhs, rhs = vector_monotonicity_gap([1.0], [0.0], 4.0)
    assert (lhs, rhs) == (1.0, 1.0)
    assert lhs >= CP_FIT[4.0] * rhs


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
def test_fitted_constant_holds_on_fresh_pairs(p):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((100_000, 2)) * np.exp(rng.uniform(-3, 3, (100_000, 1)))
    y = rng.standard_normal((100_000, 2)) * np.exp(rng.uniform(-3, 3, (100_000, 1)))
    lhs, rhs = vector_monotonicity_gap(x, y, p)
    assert np.all(lhs >= CP_FIT[p] * rhs)


def test_fit_is_reproducible():
    assert fit_monotonicity_constant(3.0, samples=3000, seed=4) == fit_monotonicity_constant(3.0, samples=3000, seed=4)


@settings(max_examples=60, deadline=None)
@given(t=st.floats(0.01, 100), p=st.sampled_from([1.5, 2.0, 3.0]), seed=st.integers(0, 2 ** 16))
def test_energy_homogeneity(t, p, seed):
    g = GridSpec(1, 32)
    u = g.field(np.random.default_rng(seed).standard_normal(g.shape))
    assert p_energy(u * t, None, 0.5, p) == pytest.approx(t ** p * p_energy(u, None, 0.5, p), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(x=st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
       y=st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
       p=st.sampled_from([1.5, 2.0, 3.0, 4.0]))
def test_vector_gap_nonnegative(x, y, p):
    lhs, rhs = vector_monotonicity_gap(x, y, p)
    assert lhs >= -1e-9 * (1 + abs(rhs))
    assert lhs >= CP_FIT[p] * rhs - 1e-9 * (1 + abs(lhs))
