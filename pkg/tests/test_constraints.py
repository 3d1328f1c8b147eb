import numpy as np
import pytest
from conftest import make_fleet
from hypothesis import given
from hypothesis import strategies as st

from techtransit.constraints import (
    ConstraintError,
    MarketConstraint,
    gate_factors,
    gate_flows,
    make_gate,
    share_limits,
    submarkets,
    violations,
)
from techtransit.core import SystemState, TimeSeries
from techtransit.dynamics import build_substitution_matrix, exchange_term, step_full
from techtransit.preference import PreferenceMatrix


def test_no_constraints_gives_trivial_limits():
    lim = share_limits([0.3, 0.7], make_fleet([30.0] * 2, [2.0] * 2), [])
    np.testing.assert_array_equal(lim.upper, [1.0, 1.0])
    np.testing.assert_array_equal(lim.lower, [0.0, 0.0])
    assert lim.binding == []


def test_capacity_form_example():
    con = MarketConstraint("seg", (1, 0), 0.4)
    lim = share_limits([0.4, 0.6], make_fleet([30.0] * 2, [2.0] * 2), [con])
    assert lim.upper[0] == pytest.approx(0.4)
    assert lim.upper_by[0] == "seg"
    assert lim.binding == ["seg"]


def test_tighter_of_two_constraints_wins():
    fleet = make_fleet([30.0] * 3, [2.0] * 3)
    loose = MarketConstraint("loose", (1, 1, 0), 0.8)
    tight = MarketConstraint("tight", (1, 0, 0), 0.3)
    lim = share_limits([0.2, 0.3, 0.5], fleet, [loose, tight])
    assert lim.upper[0] == pytest.approx(0.3) and lim.upper_by[0] == "tight"
    assert lim.upper[1] == pytest.approx(0.6) and lim.upper_by[1] == "loose"


def test_demand_form_uses_capacity_factors():
    fleet = make_fleet([30.0] * 2, [2.0] * 2, cfs=[0.25, 0.75])
    con = MarketConstraint("peak", (1, 0), 0.2, kind="demand")
    s = np.array([0.2, 0.8])
    lim = share_limits(s, fleet, [con])
    cf_bar = 0.2 * 0.25 + 0.8 * 0.75
    assert lim.upper[0] == pytest.approx(s[0] + cf_bar / 0.25 * 0.2 - 0.2)


def test_lower_limit_and_negative_coefficient():
    fleet = make_fleet([30.0] * 3, [2.0] * 3)
    floor = MarketConstraint("flex", (0, 1, 1), 0.2, sign="lower")
    # slack floor: the trivial limit of zero stands
    lim = share_limits([0.5, 0.2, 0.3], fleet, [floor])
    assert lim.lower[1] == 0.0 and lim.lower_by[1] is None
    lim = share_limits([0.75, 0.15, 0.1], fleet, [floor])
    assert lim.lower[1] == pytest.approx(0.1) and lim.lower_by[1] == "flex"
    # with a = -1 an upper bound on the sum limits that tech from below
    neg = MarketConstraint("net", (1, -1, 0), 0.1)
    lim = share_limits([0.3, 0.2, 0.5], fleet, [neg])
    assert lim.lower[1] == pytest.approx(0.2)
    assert lim.upper[0] == pytest.approx(0.3)


def test_time_varying_bound():
    con = MarketConstraint("seg", (1, 0), TimeSeries((0.0, 10.0), (0.4, 0.6)))
    assert con.bound_at(5.0) == pytest.approx(0.5)


def test_constraint_validation():
    with pytest.raises(ConstraintError):
        MarketConstraint("x", (0, 0), 0.5)
    with pytest.raises(ConstraintError):
        MarketConstraint("x", (2, 0), 0.5)
    with pytest.raises(ConstraintError):
        MarketConstraint("x", (1, 0), 1.5)
    with pytest.raises(ConstraintError):
        share_limits([0.5, 0.5], make_fleet([30.0] * 2, [2.0] * 2), [MarketConstraint("x", (1, 0, 1), 0.5)])


def _flows(u, f, fleet, dt=1.0):
    s = SystemState(0.0, np.asarray(u, float))
    return exchange_term(s, fleet, f, build_substitution_matrix(fleet, s), dt).net, s


FLEET4 = make_fleet([30.0] * 4, [2.0] * 4)
F4 = PreferenceMatrix.from_upper(np.array([[0, 0.3, 0.2, 0.1], [0, 0, 0.4, 0.2],
                                          [0, 0, 0, 0.3], [0, 0, 0, 0]]))


def test_slack_limits_leave_flows_unchanged():
    flows, s = _flows([25.0, 25.0, 25.0, 25.0], F4, FLEET4)
    lim = share_limits(s, FLEET4, [MarketConstraint("g", (0, 0, 1, 1), 0.9)])
    gated, rep = gate_flows(flows, lim, s)
    np.testing.assert_array_equal(gated, flows)
    assert rep.submarkets == [[0, 1, 2, 3]]


def test_binding_group_is_cut_off():
    # techs 2 and 3 are preferred but their group is at its upper limit
    flows, s = _flows([30.0, 20.0, 30.0, 20.0], F4, FLEET4)
    lim = share_limits(s, FLEET4, [MarketConstraint("g", (0, 0, 1, 1), 0.5)])
    gated, rep = gate_flows(flows, lim, s)
    for i in (2, 3):
        for j in (0, 1):
            assert gated[i, j] == 0.0 and gated[j, i] == 0.0
    assert gated[2, 3] == flows[2, 3] and gated[0, 1] == flows[0, 1]
    assert rep.submarkets == [[0, 1], [2, 3]]
    assert abs(gated.sum()) < 1e-12


def test_gate_rejects_non_antisymmetric_input():
    s = SystemState(0.0, np.array([50.0, 50.0]))
    lim = share_limits(s, make_fleet([30.0] * 2, [2.0] * 2), [MarketConstraint("g", (1, 0), 0.9)])
    with pytest.raises(ConstraintError):
        gate_flows(np.array([[0.0, 1.0], [1.0, 0.0]]), lim, s)


def test_removing_constraints_is_identity():
    flows, s = _flows([30.0, 20.0, 30.0, 20.0], F4, FLEET4)
    lim = share_limits(s, FLEET4, [])
    gated, _ = gate_flows(flows, lim, s)
    np.testing.assert_array_equal(gated, flows)


def test_submarkets_from_factors():
    g = np.ones((3, 3))
    g[0, 2] = g[2, 0] = 0.0
    g[1, 2] = g[2, 1] = 0.4
    assert submarkets(g) == [[0, 1], [2]]


@given(st.integers(0, 2**32 - 1), st.floats(0.2, 0.8))
def test_gating_never_reverses_or_breaks_antisymmetry(seed, bound):
    rng = np.random.default_rng(seed)
    fleet = make_fleet(list(rng.uniform(20, 80, 5)), list(rng.uniform(1, 7, 5)))
    f = PreferenceMatrix.from_upper(rng.random((5, 5)))
    u = rng.uniform(1.0, 100.0, 5)
    flows, s = _flows(u, f, fleet, 0.25)
    a = tuple(int(x) for x in rng.integers(0, 2, 5)) or (1, 0, 0, 0, 0)
    if not any(a):
        a = (1, 0, 0, 0, 0)
    con = MarketConstraint("g", a, float(np.clip(bound, np.dot(a, s.shares) + 1e-3, 1.0)))
    lim = share_limits(s, fleet, [con])
    g = gate_factors(flows, lim, s.total)
    gated = flows * g
    assert ((g >= 0) & (g <= 1)).all()
    np.testing.assert_array_equal(g, g.T)
    assert (np.sign(gated) * np.sign(flows) >= 0).all()
    assert np.abs(gated + gated.T).max() <= 1e-12 * s.total


def test_stepping_with_gate_respects_limit():
    fleet = make_fleet([30.0] * 4, [2.0] * 4)
    cons = [MarketConstraint("g", (0, 0, 1, 1), 0.5)]
    state = SystemState(0.0, np.array([40.0, 30.0, 20.0, 10.0]))
    for n in range(400):
        _, state = step_full(state, fleet, F4, None, 100.0, 100.0, 0.25, flow_gate=make_gate(fleet, cons, n * 0.25))
        assert not violations(state, fleet, cons, n * 0.25)
    assert state.shares[2] + state.shares[3] == pytest.approx(0.5, abs=1e-3)
