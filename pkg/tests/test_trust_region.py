import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from trlse.box_optimizer import BoxQuery
from trlse.errors import PreconditionError
from trlse.gp import GpModel, KernelSpec
from trlse.trust_region import (
    SFunction,
    TrustRegion,
    data_window,
    move_centroid,
    penalty,
    penalty_from_bounds,
    should_discard,
    update_lengths,
    update_volume,
    zeta_bound,
)

# Frozen from an independent 30-digit mpmath evaluation.
PENALTY_1_3_AT_0 = 0.999955725515687929
S1_AT_HALF = 1.76159415595576489
S1_AT_ONE = 0.238405844044235112
ZETA_1E3_5E2 = 0.727304405708373001
ZETA_LEVY10 = 5.48302047940935617


def test_penalty_reference_value():
    assert penalty_from_bounds(1.0, 3.0, 0.0, 1.96) == pytest.approx(PENALTY_1_3_AT_0, rel=1e-12)


def test_penalty_bracketing_symmetric_is_half():
    assert penalty_from_bounds(-2.0, 2.0, 0.0, 1.96) == 0.5


def test_penalty_degenerate_bracket_is_neutral():
    assert penalty_from_bounds(0.4, 0.4, 0.0, 1.96) == 0.5


def test_penalty_stays_below_one_when_far():
    assert penalty_from_bounds(100.0, 100.1, 0.0, 1.96) < 1.0


@pytest.mark.parametrize("u,expected", [(0.5, S1_AT_HALF), (1.0, S1_AT_ONE)])
def test_sigmoid_reference_values(u, expected):
    assert SFunction.sigmoid()(u) == pytest.approx(expected, rel=1e-13)


def test_linear_and_constant_forms():
    lin = SFunction.linear()
    assert lin(0.5) == pytest.approx(2.0)
    assert lin(1.0) == 0.0
    assert SFunction.constant()(0.9) == 1.0


def test_zeta_reference_values():
    assert zeta_bound(1e-3, 5e-2, 8, 6, 1.96) == pytest.approx(ZETA_1E3_5E2, rel=1e-12)
    assert zeta_bound(1e-5, 1e-1, 8, 6, 1.96) == pytest.approx(ZETA_LEVY10, rel=1e-12)


def test_zeta_rejects_small_beta():
    # b/a = 0.75 needs beta > Phi^-1(0.75)
    with pytest.raises(PreconditionError):
        zeta_bound(1e-3, 5e-2, 8, 6, 0.6)
    with pytest.raises(PreconditionError):
        zeta_bound(1e-1, 5e-2, 8, 6, 1.96)


def test_update_lengths_proportional_and_exact_volume():
    log_l = update_lengths(math.log(0.25), [1.0, 1.0])
    np.testing.assert_allclose(np.exp(log_l), [0.5, 0.5])
    log_l = update_lengths(math.log(1e-300), np.linspace(0.1, 3.0, 1000))
    assert abs(log_l.sum() - math.log(1e-300)) < 1e-9
    ratio = np.exp(log_l[1:] - log_l[:-1])
    np.testing.assert_allclose(ratio, np.linspace(0.1, 3.0, 1000)[1:] / np.linspace(0.1, 3.0, 1000)[:-1])


def test_update_lengths_rejects_bad_lengthscales():
    with pytest.raises(PreconditionError):
        update_lengths(0.0, [1.0, 0.0])


def test_volume_capped_at_vmax():
    assert update_volume(math.log(0.09), 0.5, SFunction.sigmoid(), 0.1) == pytest.approx(math.log(0.1))


def test_extreme_volume_stays_finite():
    log_v = math.log(1e-300) + math.log(1e-10)
    new = update_volume(log_v, 0.99, SFunction.sigmoid(), 1e-2)
    assert math.isfinite(new) and new < log_v


def test_data_window_is_closed():
    c = np.array([0.5, 0.5])
    pts = np.array([[0.75, 0.5], [0.76, 0.5], [0.5, 0.25]])
    mask = data_window(c, np.log([0.25, 0.25]), pts)
    assert mask.tolist() == [True, False, True]


def test_box_is_clipped_and_window_is_twice_the_box():
    tr = TrustRegion(0, [0.05, 0.5], math.log(0.04), np.log([0.2, 0.2]))
    lo, hi = tr.box()
    np.testing.assert_allclose(lo, [0.0, 0.4])
    np.testing.assert_allclose(hi, [0.15, 0.6])
    wlo, whi = tr.window()
    np.testing.assert_allclose(wlo, [0.0, 0.3])
    np.testing.assert_allclose(whi, [0.25, 0.7])


def test_should_discard_threshold():
    tr = TrustRegion.hypercube(0, [0.5, 0.5], math.log(1e-3))
    assert not should_discard(tr, 1e-3)
    tr.log_volume = math.log(0.5e-3) - 1e-9
    assert should_discard(tr, 1e-3)


def _confident_region(level, v_init):
    """A region whose local model sits far from zero with tiny variance."""
    x = np.random.default_rng(0).uniform(0.45, 0.55, size=(20, 2))
    model = GpModel.condition(KernelSpec("rbf", [2.0, 2.0], 1e-2), 1e-6, x, np.full(20, level))
    tr = TrustRegion.hypercube(0, [0.5, 0.5], math.log(v_init))
    tr.model = model
    return tr


def test_confident_region_discarded_within_zeta():
    v_init, v_max, beta = 1e-3, 5e-2, 1.96
    s = SFunction.sigmoid(8, 6)
    limit = math.ceil(zeta_bound(v_init, v_max, 8, 6, beta))
    tr = _confident_region(5.0, v_init)
    steps = 0
    while not should_discard(tr, v_init):
        lo, hi = tr.box()
        p, lcb, _ = penalty(tr, beta, 0.0, BoxQuery(lo, hi, budget=256, seed=steps))
        assert lcb >= 0.0
        tr.log_volume = update_volume(tr.log_volume, p, s, v_max)
        tr.log_lengths = update_lengths(tr.log_volume, [1.0, 1.0])
        steps += 1
        assert steps <= limit
    assert steps == 1


def test_move_centroid_never_regresses():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(15, 2))
    model = GpModel.condition(KernelSpec("matern52", [0.3, 0.3]), 1e-4, x, np.sin(6 * x[:, 0]))
    tr = TrustRegion.hypercube(0, [0.5, 0.5], math.log(0.04))
    tr.model = model
    lo, hi = tr.box()
    new = move_centroid(tr, 0.0, BoxQuery(lo, hi, budget=128, seed=1))
    before = abs(model.posterior(tr.centroid[None])[0][0])
    after = abs(model.posterior(new[None])[0][0])
    assert after <= before
    assert np.all(new >= lo) and np.all(new <= hi)


def test_move_centroid_keeps_centroid_on_tie():
    model = GpModel.condition(KernelSpec("rbf", [1.0, 1.0]), 1e-4, np.zeros((0, 2)), [])
    tr = TrustRegion.hypercube(0, [0.3, 0.7], math.log(0.01))
    tr.model = model
    lo, hi = tr.box()
    np.testing.assert_array_equal(move_centroid(tr, 0.0, BoxQuery(lo, hi, budget=64)), [0.3, 0.7])


# Property suite over random (lcb, ucb, h, beta) tuples.
bounds = st.floats(-1e3, 1e3, allow_nan=False)
betas = st.floats(0.6745, 5.0)


@settings(max_examples=2000, deadline=None)
@given(bounds, bounds, bounds, betas, st.floats(0.0, 0.99))
def test_penalty_volume_invariants(a, b, h, beta, psi_frac):
    lcb, ucb = min(a, b), max(a, b)
    p = penalty_from_bounds(lcb, ucb, h, beta)
    assert 0.5 <= p < 1.0
    # b = psi * a with psi < Phi(beta) makes S < 1 above Phi(beta)
    a_s = 8.0
    psi = psi_frac * norm.cdf(beta)
    s = SFunction.sigmoid(a_s, psi * a_s)
    log_v = math.log(1e-3)
    v_max = 5e-2
    new = update_volume(log_v, p, s, v_max)
    assert new <= math.log(v_max)
    if p > norm.cdf(beta):
        assert new < log_v
    log_l = update_lengths(new, [1.0, 2.0, 0.5])
    assert abs(log_l.sum() - new) < 1e-9
