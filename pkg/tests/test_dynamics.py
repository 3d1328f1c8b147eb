import numpy as np
import pytest
from conftest import make_fleet
from hypothesis import given
from hypothesis import strategies as st
from oracles import load_frozen, logistic

from techtransit.core import SystemState
from techtransit.dynamics import (
    StabilityError,
    approximation_error,
    build_substitution_matrix,
    demand_decrease_alloc,
    demand_increase_alloc,
    exchange_term,
    integrate_shares,
    step_full,
    step_simplified,
)
from techtransit.preference import PreferenceMatrix

FROZEN = load_frozen()
F2 = PreferenceMatrix(np.array([[0.5, 0.75], [0.25, 0.5]]))
F3 = PreferenceMatrix(np.array([[0.5, 0.7, 0.2], [0.3, 0.5, 0.9], [0.8, 0.1, 0.5]]))
FLEET3 = make_fleet([25.0, 40.0, 60.0], [2.0, 4.0, 6.0])


def test_substitution_matrix_examples(two_fleet, state_5050):
    a = build_substitution_matrix(two_fleet, state_5050, 10.0)
    np.testing.assert_allclose(a.frequencies, 0.2)
    raw = build_substitution_matrix(two_fleet, state_5050, 1.0)
    np.testing.assert_allclose(raw.frequencies * 10.0, a.frequencies)
    homo = build_substitution_matrix(make_fleet([30.0] * 4, [3.0] * 4), [0.1, 0.2, 0.3, 0.4], 10.0)
    assert np.ptp(homo.frequencies) == 0.0


def test_substitution_matrix_ratios():
    fleet = make_fleet([20.0, 35.0, 80.0], [1.0, 3.0, 7.0])
    a = build_substitution_matrix(fleet, [0.2, 0.3, 0.5], 10.0).frequencies
    assert (a > 0).all()
    assert a[0, 2] / a[1, 2] == pytest.approx(3.0 / 1.0, rel=1e-14)
    assert a[1, 0] / a[1, 2] == pytest.approx(80.0 / 20.0, rel=1e-14)
    with pytest.raises(ValueError):
        build_substitution_matrix(fleet, [0.2, 0.3, 0.5], 0.0)


def test_exchange_matches_reference(two_fleet, state_5050):
    a = build_substitution_matrix(two_fleet, state_5050, 10.0)
    flows = exchange_term(state_5050, two_fleet, F2, a, 1.0)
    np.testing.assert_allclose(flows.net, FROZEN["exchange_2tech"], rtol=1e-12)
    assert flows.net[0, 1] == pytest.approx(2.5)
    s3 = SystemState(0.0, np.array([10.0, 30.0, 60.0]))
    a3 = build_substitution_matrix(FLEET3, s3, 10.0)
    np.testing.assert_allclose(exchange_term(s3, FLEET3, F3, a3, 0.5).net, FROZEN["exchange_3tech"], rtol=1e-12)


def test_exchange_zero_cases(two_fleet, state_5050):
    a = build_substitution_matrix(two_fleet, state_5050, 10.0)
    flows = exchange_term(state_5050, two_fleet, PreferenceMatrix.indifferent(2), a, 1.0)
    assert np.abs(flows.net).max() < 1e-15
    s = SystemState(0.0, np.array([0.0, 40.0, 60.0]))
    flows = exchange_term(s, FLEET3, F3, build_substitution_matrix(FLEET3, s), 0.25)
    assert not flows.net[0].any() and not flows.net[:, 0].any()


def test_exchange_stability_error(two_fleet):
    s = SystemState(0.0, np.array([50.0, 50.0]))
    a = build_substitution_matrix(two_fleet, s, 10.0)
    with pytest.raises(StabilityError):
        exchange_term(s, two_fleet, PreferenceMatrix(np.array([[0.5, 1.0], [0.0, 0.5]])), a, 20.0)


def test_increase_allocation_rules():
    fleet = make_fleet([30.0] * 3, [3.0] * 3)
    s = SystemState(0.0, np.array([10.0, 30.0, 60.0]))
    zero = demand_increase_alloc(s, fleet, PreferenceMatrix.indifferent(3), 0.0, 1.0)
    assert not zero.amounts.any()
    prop = demand_increase_alloc(s, fleet, PreferenceMatrix.indifferent(3), 5.0, 1.0)
    np.testing.assert_allclose(prop.amounts, 5.0 * s.shares)
    # requested rate twice the building capacity U_tot / tbar
    big = demand_increase_alloc(s, fleet, PreferenceMatrix.indifferent(3), 2 * 100.0 / 3.0, 1.0)
    assert big.capped
    assert big.amounts.sum() == pytest.approx(100.0 / 3.0)
    assert big.unmet == pytest.approx(100.0 / 3.0)
    with pytest.raises(ValueError):
        demand_increase_alloc(s, fleet, F3, -1.0, 1.0)


def test_decrease_allocation_rules():
    fleet = make_fleet([30.0] * 3, [3.0] * 3)
    s = SystemState(0.0, np.array([30.0, 30.0, 40.0]))
    assert not demand_decrease_alloc(s, fleet, F3, 0.0, 1.0).amounts.any()
    # tech 2 loses every comparison
    loser = PreferenceMatrix.from_upper([[0, 0.5, 1.0], [0, 0, 1.0], [0, 0, 0]])
    mixed = PreferenceMatrix.indifferent(3)
    d_loser = demand_decrease_alloc(s, fleet, loser, 2.0, 1.0).amounts
    d_mixed = demand_decrease_alloc(s, fleet, mixed, 2.0, 1.0).amounts
    assert d_loser[2] > d_mixed[2]
    assert np.argmax(d_loser / s.capacities) == 2
    cap = 100.0 / 30.0
    over = demand_decrease_alloc(s, fleet, mixed, 2 * cap, 1.0)
    assert over.capped and over.unmet == pytest.approx(cap)
    assert over.amounts.sum() == pytest.approx(cap)


def test_step_full_equilibrium():
    fleet = make_fleet([30.0] * 3, [3.0] * 3)
    s = SystemState(0.0, np.array([10.0, 30.0, 60.0]))
    res, new = step_full(s, fleet, PreferenceMatrix.indifferent(3), None, 100.0, 100.0, 0.25)
    np.testing.assert_allclose(new.capacities, s.capacities, atol=1e-12)
    assert res.approx_error == 0.0


def test_growth_with_homogeneous_preferences_keeps_shares():
    fleet = make_fleet([30.0] * 3, [3.0] * 3)
    state = SystemState(0.0, np.array([10.0, 30.0, 60.0]))
    f = PreferenceMatrix.indifferent(3)
    for n in range(40):
        d = 100.0 * 1.05 ** (n * 0.25)
        _, state = step_full(state, fleet, f, None, d, 100.0 * 1.05 ** ((n + 1) * 0.25), 0.25)
    np.testing.assert_allclose(state.shares, [0.1, 0.3, 0.6], atol=1e-9)
    assert state.total == pytest.approx(100.0 * 1.05 ** 10)


def test_full_equals_simplified_at_constant_total():
    s = SystemState(0.0, np.array([10.0, 30.0, 60.0]))
    a = build_substitution_matrix(FLEET3, s, 10.0)
    _, full = step_full(s, FLEET3, F3, a, 100.0, 100.0, 0.25)
    simple = step_simplified(s, FLEET3, F3, a, 0.25)
    np.testing.assert_allclose(full.shares, simple, atol=1e-14)


def test_simplified_matches_reference_euler():
    _, out = integrate_shares([0.1, 0.3, 0.6], FLEET3, F3, 10.0, 0.25, 5.0)
    np.testing.assert_allclose(out[-1], FROZEN["euler_3tech_20steps"], rtol=1e-12)


def test_indifference_is_fixed_point():
    s = np.array([0.2, 0.5, 0.3])
    np.testing.assert_allclose(step_simplified(s, make_fleet([30.0] * 3, [3.0] * 3),
                                               PreferenceMatrix.indifferent(3), 10.0, 0.25), s, atol=1e-15)


def test_cyclic_preferences_stay_in_simplex():
    cyclic = PreferenceMatrix.from_upper([[0, 0.8, 0.2], [0, 0, 0.8], [0, 0, 0]])
    fleet = make_fleet([30.0] * 3, [3.0] * 3)
    _, out = integrate_shares([0.5, 0.3, 0.2], fleet, cyclic, 10.0, 0.1, 100.0, "rk4")
    assert out.min() >= 0.0 and out.max() <= 1.0
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    # the winner keeps changing, so no single tech is monotone
    d = np.diff(out[:, 0])
    assert (d > 0).any() and (d < 0).any()


def _pair_error(dt, integrator):
    fleet = make_fleet([50.0, 50.0], [4.0, 4.0])
    times, out = integrate_shares([0.5, 0.5], fleet, F2, 10.0, dt, 20.0, integrator)
    ref = np.array([logistic(10.0, 0.5, t) for t in times])
    return np.abs(out[:, 0] - ref).max()


def test_euler_is_first_order():
    ratio = _pair_error(0.2, "euler") / _pair_error(0.1, "euler")
    assert 1.8 < ratio < 2.2


def test_rk4_is_fourth_order():
    ratio = _pair_error(1.0, "rk4") / _pair_error(0.5, "rk4")
    assert 13.0 < ratio < 19.0


def test_scale_is_a_time_rescaling():
    fleet = make_fleet([25.0, 40.0, 60.0], [2.0, 4.0, 6.0])
    _, fast = integrate_shares([0.1, 0.3, 0.6], fleet, F3, 10.0, 0.01, 2.0, "rk4")
    _, slow = integrate_shares([0.1, 0.3, 0.6], fleet, F3, 1.0, 0.1, 20.0, "rk4")
    np.testing.assert_allclose(fast[-1], slow[-1], atol=1e-10)


def test_approximation_error_zero_cases():
    fleet = make_fleet([30.0] * 3, [3.0] * 3)
    s = SystemState(0.0, np.array([10.0, 30.0, 60.0]))
    assert not approximation_error(s, fleet, PreferenceMatrix.indifferent(3), 10.0).any()
    assert not approximation_error(s, FLEET3, F3, 0.0).any()
    assert approximation_error(s, FLEET3, F3, 10.0).max() > 0


def test_outflow_clipping_prevents_negative_capacity():
    # the small tech retires fast and loses every replacement to a quick builder
    fleet = make_fleet([60.0, 20.0], [1.0, 7.0])
    f = PreferenceMatrix(np.array([[0.5, 1.0], [0.0, 0.5]]))
    s = SystemState(0.0, np.array([99.0, 1.0]))
    res, new = step_full(s, fleet, f, None, 100.0, 100.0, 2.5)
    assert (new.capacities >= 0).all()
    assert res.clipped > 0


def test_retired_technology_gets_no_inflow():
    s = SystemState(0.0, np.array([0.0, 40.0, 60.0]), retired=np.array([True, False, False]))
    res, new = step_full(s, FLEET3, F3, None, 100.0, 110.0, 0.25)
    assert new.capacities[0] == 0.0
    assert res.new_build[0] == 0.0


@st.composite
def random_system(draw):
    n = draw(st.integers(2, 10))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    fleet = make_fleet(list(rng.uniform(20, 80, n)), list(rng.uniform(1, 7, n)),
                       cfs=list(rng.uniform(0.1, 1.0, n)))
    u = rng.uniform(0.0, 100.0, n)
    u[rng.random(n) < 0.15] = 0.0
    u[0] += 1.0
    f = PreferenceMatrix.from_upper(rng.random((n, n)))
    growth = draw(st.sampled_from([0.0, 0.05, -0.02]))
    return fleet, SystemState(0.0, u), f, growth


@given(random_system())
def test_step_invariants(system):
    fleet, state, f, growth = system
    demand = float(np.dot(fleet.capacity_factors, state.capacities))
    res, new = step_full(state, fleet, f, None, demand, demand * (1 + growth * 0.25), 0.25)
    d = res.exchange_flows
    assert np.abs(d + d.T).max() <= 1e-12 * state.total
    assert (new.capacities >= 0).all()
    assert abs(new.shares.sum() - 1.0) <= 1e-12
    assert abs((new.shares - state.shares).sum()) <= 1e-9
    # capacity balance: the step moves total capacity by build minus scrap
    assert new.total - state.total == pytest.approx(res.new_build.sum() - res.permanent_decommission.sum(),
                                                   abs=1e-9 * state.total)
