import csv

import numpy as np
import pytest

from pbiharmonic import (ConformalCoefficient, DnContext, Field, GridSpec, TraceDatum,
                         dn_matrix_linear, dn_pair, quotient_independence_check)
from pbiharmonic.dense import schur_dn_matrix
from pbiharmonic.dnmap import dn_self, export_matrix_csv, trace_norm

from conftest import central_mask, smooth_field

G = GridSpec(2, 16)
MASK = central_mask(G)


def _datum(rng):
    return TraceDatum.from_field(G.field(smooth_field(G, rng)), MASK)


def _interior_phi(rng):
    v = np.zeros(G.shape + (1,))
    v[MASK.interior] = rng.standard_normal((MASK.n_interior, 1))
    return Field(G, v)


def test_datum_zeroes_interior(rng):
    f = _datum(rng)
    assert not f.field.values[MASK.interior].any()
    with pytest.raises(ValueError):
        TraceDatum(G.field(np.ones(G.shape)), MASK)
    assert (f * 2.0 + f).key() == (f * 3.0).key()


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_zero_datum(rng, p):
    ctx = DnContext(MASK, 0.5, p)
    assert dn_pair(ctx, TraceDatum.from_field(G.zeros(), MASK), _datum(rng)) == 0.0
    assert ctx.cache_size == 0


@pytest.mark.parametrize("p", [1.5, 3.0])
def test_homogeneity_slope(rng, p):
    ctx = DnContext(MASK, 0.5, p)
    f, g = _datum(rng), _datum(rng)
    ts = np.array([1.0, 2.0, 4.0, 8.0])
    base = dn_pair(ctx, f, g)
    for t in ts[1:]:
        assert dn_pair(ctx, f * t, g) == pytest.approx(t ** (p - 1) * base, rel=1e-7)
    vals = [dn_pair(ctx, f * t, f) for t in ts]
    slope = np.polyfit(np.log(ts), np.log(vals), 1)[0]
    assert slope == pytest.approx(p - 1, abs=1e-6)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_boundedness_constant(rng, p):
    ctx = DnContext(MASK, 0.5, p)
    consts = []
    for _ in range(10):
        f, g = _datum(rng), _datum(rng)
        ratio = abs(dn_pair(ctx, f, g)) / (trace_norm(f, 0.5, p) ** (p - 1) * trace_norm(g, 0.5, p))
        consts.append(ratio)
    assert 0 < max(consts) < np.inf


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_self_pairing_is_p_energy(rng, p):
    sigma = ConformalCoefficient(G, 1.0 + 0.5 * np.abs(smooth_field(G, rng)[..., 0]), 1.0)
    ctx = DnContext(MASK, 0.5, p, sigma=sigma)
    val, en, res = dn_self(ctx, _datum(rng))
    assert val > 0
    assert val == pytest.approx(en, rel=1e-10)


def test_quotient_independence_linear(rng):
    ctx = DnContext(MASK, 0.5, 2.0, tol=1e-11)
    f, g = _datum(rng), _datum(rng)
    phi = _interior_phi(rng)
    out = quotient_independence_check(ctx, f, g, phi)
    assert out["deviation"] <= 1e-8 * np.linalg.norm(phi.values)
    assert out["within"]
    zero = quotient_independence_check(ctx, f, g, G.zeros())
    assert zero["deviation"] == 0.0


def test_quotient_independence_p3(rng):
    ctx = DnContext(MASK, 0.5, 3.0, tol=1e-10)
    out = quotient_independence_check(ctx, _datum(rng), _datum(rng), _interior_phi(rng))
    assert out["deviation"] <= out["slack"]


def test_phi_must_be_interior(rng):
    ctx = DnContext(MASK, 0.5, 2.0)
    with pytest.raises(ValueError):
        quotient_independence_check(ctx, _datum(rng), _datum(rng), G.field(np.ones(G.shape)))


@pytest.fixture(scope="module")
def small_problem():
    g = GridSpec(2, 8)
    return g, central_mask(g)


def test_matrix_matches_schur_complement(small_problem):
    g, mask = small_problem
    M, ext = dn_matrix_linear(DnContext(mask, 0.5, 2.0, tol=1e-12))
    ref = schur_dn_matrix(g, mask.interior, 0.5)
    assert np.max(np.abs(M - M.T)) <= 1e-9
    assert np.max(np.abs(M - ref)) <= 1e-8 * np.max(np.abs(ref))
    assert ext.size == mask.n_exterior


def test_matrix_doubles_with_sigma(small_problem):
    g, mask = small_problem
    M1, _ = dn_matrix_linear(DnContext(mask, 0.5, 2.0, tol=1e-12))
    M2, _ = dn_matrix_linear(DnContext(mask, 0.5, 2.0, sigma=ConformalCoefficient.constant(g, 2.0), tol=1e-12))
    np.testing.assert_allclose(M2, 2 * M1, rtol=0, atol=1e-9 * np.max(np.abs(M1)))


def test_matrix_rejected_for_nonlinear(small_problem):
    _, mask = small_problem
    with pytest.raises(ValueError):
        dn_matrix_linear(DnContext(mask, 0.5, 3.0))


def test_matrix_csv_roundtrip(tmp_path, small_problem):
    _, mask = small_problem
    M, ext = dn_matrix_linear(DnContext(mask, 0.5, 2.0))
    path = export_matrix_csv(M, tmp_path / "dn.csv", ext)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert [int(i) for i in rows[0]] == list(ext)
    np.testing.assert_array_equal(np.array(rows[1:], dtype=float), M)


def test_cache_and_warm_start(rng):
    warm = {}
    ctx = DnContext(MASK, 0.5, 3.0, warm=warm)
    f = _datum(rng)
    first = ctx.solve(f)
    assert ctx.solve(f) is first and f.key() in warm
    other = ctx.with_sigma(ConformalCoefficient.constant(G, 1.0))
    rep = other.solve(f)
    assert rep.iterations <= 2
    np.testing.assert_allclose(rep.solution.values, first.solution.values, atol=1e-8)
