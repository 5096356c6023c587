import math

import numpy as np
import pytest

from approute.builtins import SEVEN_LINK_EQUILIBRIUM, builtin
from approute.dynamics import (
    BarrierExceeded,
    LinkParams,
    NegativeDensity,
    NotARamp,
    OutflowLaw,
    RatePolicy,
    TravelCostLaw,
    appeal,
    appeals,
    outflow,
    perceived_costs,
    reaction_rate,
    reaction_rates,
    routing_rhs,
    traffic_rhs,
    travel_cost,
)
from approute.network import RoutingState

X_STAR, R_STAR = SEVEN_LINK_EQUILIBRIUM


def test_saturated_linear():
    law = OutflowLaw.saturated_linear(1.0, 2.0)
    assert outflow(law, 1.0) == 1.0
    assert outflow(law, 5.0) == 2.0


@pytest.mark.parametrize(
    "law", [OutflowLaw.saturated_linear(1, 2), OutflowLaw.linear(3), OutflowLaw.exponential(2, 1)]
)
def test_zero_density_zero_flow(law):
    assert outflow(law, 0.0) == 0.0


def test_exponential_closed_form():
    assert outflow(OutflowLaw.exponential(2.0, 1.0), math.log(2)) == pytest.approx(1.0, abs=1e-15)


def test_negative_density_rejected():
    with pytest.raises(NegativeDensity):
        outflow(OutflowLaw.linear(), -1.0)
    with pytest.raises(NegativeDensity):
        travel_cost(TravelCostLaw.affine(1, 0), -0.1)


def test_invalid_laws():
    with pytest.raises(ValueError):
        OutflowLaw.saturated_linear(1.0, -1.0)
    with pytest.raises(ValueError):
        TravelCostLaw.affine(-1.0, 0.0)
    with pytest.raises(ValueError):
        LinkParams(OutflowLaw.linear(), TravelCostLaw.affine(1, 0), alpha=1.5)


def test_affine_costs():
    assert travel_cost(TravelCostLaw.affine(1, 50), 2.0) == 52.0
    assert travel_cost(TravelCostLaw.affine(1, 0), 0.0) == 0.0


def test_barrier_grows_without_bound():
    law = TravelCostLaw.barrier(1.0, 0.0, 10.0)
    vals = [travel_cost(law, x) for x in (9.9, 9.99, 9.999)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] > 1000
    with pytest.raises(BarrierExceeded):
        travel_cost(law, 10.0)


def test_perceived_costs_seven_link(seven):
    pi = perceived_costs(seven.network, X_STAR, seven.params)
    assert tuple(pi.values) == (104, 98, 98, 58, 58, 46, 6)
    assert pi[7] == 6


def test_perceived_costs_local(seven):
    params = {l: LinkParams(p.outflow, p.cost, 1.0) for l, p in seven.params.items()}
    pi = perceived_costs(seven.network, X_STAR, params)
    tau = [travel_cost(params[l].cost, x) for l, x in zip(seven.network.links, X_STAR)]
    assert np.array_equal(pi.values, tau)


def test_perceived_costs_partial_alpha(seven):
    net = seven.network
    params = {l: LinkParams(p.outflow, p.cost, 0.5) for l, p in seven.params.items()}
    pi = perceived_costs(net, X_STAR, params).as_dict()
    assert pi[7] == 6
    assert pi[6] == 40 + 0.5 * 6
    assert pi[3] == 52 + 0.5 * pi[6]


def test_appeal_examples(congested):
    net = congested.network
    r = {(1, 2): 0.5, (1, 3): 0.5}
    pi = {1: 0.0, 2: 10.0, 3: 20.0, 4: 0.0}
    assert appeal(net, r, pi, (1, 2)) == 5.0
    assert appeal(net, r, pi, (1, 3)) == -5.0
    pi = {1: 0.0, 2: 7.0, 3: 7.0, 4: 0.0}
    assert np.all(appeals(net, {(1, 2): 0.3, (1, 3): 0.7}, pi) == 0)
    with pytest.raises(NotARamp):
        appeal(net, r, pi, (2, 3))


def test_appeals_vanish_at_equilibrium(seven):
    net = seven.network
    pi = perceived_costs(net, X_STAR, seven.params)
    assert np.all(appeals(net, R_STAR, pi) == 0)


def test_appeals_sum_to_zero(seven):
    net = seven.network
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 10, net.n_links)
    r = {(1, 2): 0.3, (1, 3): 0.7, (2, 4): 0.9, (2, 5): 0.1}
    a = appeals(net, r, perceived_costs(net, x, seven.params))
    rs = RoutingState.from_mapping(net, r)
    for l in net.junctions:
        ks = [net.ramp_index[(l, m)] for m in net.downstream[l]]
        assert abs(sum(rs.values[k] * a[k] for k in ks)) < 1e-12


def test_traffic_rhs_at_equilibrium(seven):
    dx = traffic_rhs(seven.network, X_STAR, R_STAR, 6.0, seven.params)
    assert np.max(np.abs(dx)) <= 1e-12


def test_traffic_rhs_empty(seven):
    assert np.all(traffic_rhs(seven.network, np.zeros(7), R_STAR, 0.0, seven.params) == 0)


def test_traffic_rhs_congested_road(congested):
    # x_2 beyond capacity: outflow pinned at C, inflow r * lambda
    net = congested.network
    dx = traffic_rhs(net, [2.0, 5.0, 0.5, 2.0], {(1, 2): 0.7, (1, 3): 0.3}, 2.0, congested.params)
    assert dx[net.index[2]] == pytest.approx(-1.0 + 0.7 * 2.0)
    assert dx[net.index[3]] == pytest.approx(-0.5 + 0.3 * 2.0)
    assert dx[net.index[1]] == pytest.approx(2.0 - 2.0)


def test_routing_rhs_reduced_two_link(congested):
    net = congested.network
    z = 0.8
    x = np.array([2.0, 4.0, 4.0 + z, 2.0])
    pi = perceived_costs(net, x, congested.params)
    dr = routing_rhs(net, {(1, 2): 0.5, (1, 3): 0.5}, pi, RatePolicy.constant(1.0))
    assert dr[net.ramp_index[(1, 2)]] == pytest.approx(0.25 * z, abs=1e-14)
    assert dr.sum() == pytest.approx(0.0, abs=1e-15)


def test_zero_ratio_absorbing(seven):
    net = seven.network
    rng = np.random.default_rng(0)
    for _ in range(10):
        pi = perceived_costs(net, rng.uniform(0, 20, 7), seven.params)
        dr = routing_rhs(net, {(1, 2): 0.0, (1, 3): 1.0, (2, 4): 1.0, (2, 5): 0.0}, pi, RatePolicy.local(0.01))
        assert dr[net.ramp_index[(1, 2)]] == 0 and dr[net.ramp_index[(2, 5)]] == 0


def test_reaction_rates(seven):
    net = seven.network
    pi = perceived_costs(net, X_STAR, seven.params)
    assert np.all(reaction_rates(net, pi, RatePolicy.constant(1.0)) == 1.0)
    assert reaction_rate(RatePolicy.local(0.01), net, pi, 1) == pytest.approx(0.98, abs=1e-15)
    # rates shrink towards the destination along a path
    rates = [reaction_rate(RatePolicy.local(0.01), net, pi, l) for l in (1, 2, 5)]
    assert rates[0] >= rates[1] >= rates[2]


def test_rate_floor(congested):
    net = congested.network
    pi = perceived_costs(net, np.zeros(4), congested.params)
    rates = reaction_rates(net, pi, RatePolicy.local(0.01, floor=1e-9))
    assert np.all(rates >= 1e-9)
