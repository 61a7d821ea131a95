import csv

import numpy as np
import pytest

from pbiharmonic import (ConformalCoefficient, GridSpec, MeasurementOracle, dn_gap,
                         monotonicity_bounds, reconstruct_sigma, single_measurement_experiment)
from pbiharmonic.inverse import (beta_factor, block_partition, bump_probes, lower_bound_beta,
                                 lower_bound_density, write_decision_ledger)
from pbiharmonic.solver import box_indicator

from conftest import central_mask, smooth_field

G = GridSpec(2, 16)
MASK = central_mask(G)
BLOCKS = block_partition(G, MASK, 4)
HALF = G.L / 4 + 2 * G.h
WINDOW = ~box_indicator(G, -HALF, HALF)
PROBES = bump_probes(G, WINDOW, 6, seed=0)
LEVELS = np.arange(1.0, 2.76, 0.25)
ONES = np.ones(G.shape)


def _inclusion(b=1, value=2.0):
    sig = ONES.copy()
    sig[BLOCKS[b]] = value
    return sig


def _random_pair(rng):
    s2 = 1.0 + 0.5 * np.abs(smooth_field(G, rng)[..., 0])
    s1 = s2 + np.abs(smooth_field(G, rng)[..., 0])
    return s1, s2


def test_blocks_and_probes():
    assert len(BLOCKS) == 4
    union = np.zeros(G.shape, bool)
    for b in BLOCKS:
        assert b.sum() == 16 and not (union & b).any()
        union |= b
    np.testing.assert_array_equal(union, MASK.interior)
    assert not (WINDOW & MASK.interior).any()
    for u in PROBES:
        assert np.any(u.values) and not np.any(u.values[~WINDOW])
    again = bump_probes(G, WINDOW, 6, seed=0)
    for a, b in zip(PROBES, again):
        np.testing.assert_array_equal(a.values, b.values)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_equal_coefficients_give_zero_gap(rng, p):
    sig = 1.0 + np.abs(smooth_field(G, rng)[..., 0])
    out = monotonicity_bounds(PROBES[0], sig, sig, None, MASK, 0.5, p)
    assert abs(out["gap"]) <= 2 * out["slack"]
    assert abs(out["lower"]) <= 1e-12 and abs(out["upper"]) <= 1e-12


def test_gap_antisymmetric(rng):
    s1, s2 = _random_pair(rng)
    a = dn_gap(PROBES[1], s1, s2, None, MASK, 0.5, 3.0)
    b = dn_gap(PROBES[1], s2, s1, None, MASK, 0.5, 3.0)
    assert a == pytest.approx(-b, rel=1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_sandwich_on_random_monotone_pairs(rng, p):
    for k in range(4):
        s1, s2 = _random_pair(rng)
        out = monotonicity_bounds(PROBES[k], s1, s2, None, MASK, 0.5, p)
        assert out["gap"] > 0
        assert out["lower"] - out["slack"] <= out["gap"] <= out["upper"] + out["slack"]
        rev = monotonicity_bounds(PROBES[k], s2, s1, None, MASK, 0.5, p)
        assert rev["gap"] <= rev["slack"]


def test_constant_ratio_anchor():
    out = monotonicity_bounds(PROBES[2], 2 * ONES, ONES, None, MASK, 0.5, 2.0)
    assert out["lower"] / out["upper"] == pytest.approx(0.5, rel=1e-12)


def test_density_at_optimal_beta():
    rng = np.random.default_rng(3)
    s2 = rng.uniform(1, 2, 50)
    s1 = s2 + rng.uniform(0, 2, 50)
    for p in (1.5, 2.0, 3.0):
        np.testing.assert_allclose(lower_bound_density(s1, s2, p, beta=p - 1),
                                   lower_bound_density(s1, s2, p), rtol=1e-12, atol=1e-14)


def test_beta_factor_minimized_at_p_minus_one():
    for p in (1.5, 2.0, 3.0, 4.0):
        b = np.linspace(0.5, 1.5, 10001) * (p - 1)
        assert b[np.argmin(beta_factor(b, p))] == pytest.approx(p - 1, abs=2e-4 * (p - 1))


def test_normalized_lower_bound_peaks_at_p_minus_one(rng):
    for p in (1.5, 3.0):
        s1, s2 = _random_pair(rng)
        betas = p - 1 + np.linspace(-0.2, 0.2, 9)
        vals = lower_bound_beta(PROBES[0], s1, s2, None, MASK, 0.5, p, betas)
        assert int(np.argmax(vals)) == 4


def test_single_measurement_flags_inclusion():
    r = single_measurement_experiment(MASK, _inclusion(), ONES, PROBES[0], WINDOW, 0.5, 2.0,
                                      blocks=BLOCKS)
    assert r["flagged"] and r["threshold_met"]
    assert r["lower"] > r["slack"]
    assert [e["block"] for e in r["blocks"]] == [1]


def test_single_measurement_equal_and_empty():
    r = single_measurement_experiment(MASK, ONES, ONES, PROBES[0], WINDOW, 0.5, 2.0, blocks=BLOCKS)
    assert not r["flagged"] and abs(r["gap"]) <= r["slack"] and r["blocks"] == []
    empty = single_measurement_experiment(MASK, ONES + 0.0 * _inclusion(), ONES, PROBES[0], WINDOW,
                                          0.5, 2.0, blocks=BLOCKS)
    assert abs(empty["gap"]) <= empty["slack"]


def test_single_measurement_argument_checks():
    with pytest.raises(ValueError, match="nonzero"):
        single_measurement_experiment(MASK, ONES, ONES, G.zeros(), WINDOW, 0.5, 2.0)
    with pytest.raises(ValueError, match="sigma1 >= sigma2"):
        single_measurement_experiment(MASK, ONES, 2 * ONES, PROBES[0], WINDOW, 0.5, 2.0)
    with pytest.raises(ValueError, match="window"):
        single_measurement_experiment(MASK, ONES, ONES, PROBES[0], np.ones(G.shape, bool), 0.5, 2.0)


def test_measurement_noise_is_seeded():
    a = MeasurementOracle(MASK, ONES, 0.5, 2.0, eta=1e-3, seed=5).measure(PROBES[0])
    b = MeasurementOracle(MASK, ONES, 0.5, 2.0, eta=1e-3, seed=5).measure(PROBES[0])
    assert a.value == b.value
    assert abs(a.value / a.clean_value - 1) <= 1e-3
    assert a.value >= -a.residual


def test_reconstruct_constant_truth():
    oracle = MeasurementOracle(MASK, ONES, 0.5, 2.0, tol=1e-9)
    est = reconstruct_sigma(oracle, PROBES, BLOCKS, LEVELS, 1.0)
    assert np.all(est.lower <= 1.0) and np.all(np.abs(est.estimate - 1.0) <= LEVELS[1] - LEVELS[0])


@pytest.fixture(scope="module")
def noiseless():
    oracle = MeasurementOracle(MASK, _inclusion(), 0.5, 2.0, tol=1e-9)
    return reconstruct_sigma(oracle, PROBES, BLOCKS, LEVELS, 1.0)


def test_reconstruct_inclusion(noiseless):
    truth = np.array([2.0 if k == 1 else 1.0 for k in range(4)])
    assert np.all(np.abs(noiseless.estimate - truth) <= 0.05 * truth)
    assert np.all(noiseless.lower <= truth) and np.all(truth <= noiseless.upper)
    assert noiseless.inconclusive == []
    np.testing.assert_array_equal(noiseless.field.values[..., 0][BLOCKS[1]], 2.0)


def test_tiny_noise_keeps_reconstruction(noiseless):
    oracle = MeasurementOracle(MASK, _inclusion(), 0.5, 2.0, tol=1e-9, eta=1e-8, seed=1)
    est = reconstruct_sigma(oracle, PROBES, BLOCKS, LEVELS, 1.0)
    np.testing.assert_array_equal(est.estimate, noiseless.estimate)


def test_noise_widens_intervals_without_excluding_truth(noiseless):
    # one block changes each datum's pairing by a relative amount near 1e-6, so a
    # relative noise of 1e-3 masks the inclusion; the certified intervals must
    # widen and still contain the truth
    oracle = MeasurementOracle(MASK, _inclusion(), 0.5, 2.0, tol=1e-9, eta=1e-3, seed=1)
    est = reconstruct_sigma(oracle, PROBES, BLOCKS, LEVELS, 1.0)
    truth = np.array([2.0 if k == 1 else 1.0 for k in range(4)])
    assert np.all(est.lower <= truth) and np.all(truth <= est.upper)
    assert np.all(est.upper - est.lower >= noiseless.upper - noiseless.lower)
    assert not any(row["verdict"] == "conflict" for row in est.ledger)


def test_budget_exhaustion_is_partial():
    oracle = MeasurementOracle(MASK, _inclusion(), 0.5, 2.0, tol=1e-9)
    est = reconstruct_sigma(oracle, PROBES, BLOCKS, LEVELS, 1.0, budget=40)
    assert est.solves <= 40
    assert est.inconclusive


def test_level_validation():
    oracle = MeasurementOracle(MASK, ONES, 0.5, 2.0)
    with pytest.raises(ValueError):
        reconstruct_sigma(oracle, PROBES, BLOCKS, [1.0], 1.0)
    with pytest.raises(ValueError):
        reconstruct_sigma(oracle, PROBES, BLOCKS, [0.5, 1.0], 1.0)


def test_decision_ledger_csv(tmp_path, noiseless):
    path = write_decision_ledger(noiseless, tmp_path / "ledger.csv")
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["sweep", "block", "level", "lower", "gap", "upper", "slack", "verdict"]
    assert len(rows) == len(noiseless.ledger)
    assert {r["verdict"] for r in rows} <= {"below", "above", "match", "conflict"}
    assert float(rows[0]["level"]) == noiseless.ledger[0]["level"]
