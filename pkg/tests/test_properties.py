import math
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from approute.builtins import BUILTINS, builtin, two_link
from approute.dynamics import (
    LinkParams,
    OutflowLaw,
    RatePolicy,
    TravelCostLaw,
    appeals,
    outflow,
    perceived_costs,
    routing_rhs,
    traffic_rhs,
    travel_cost,
)
from approute.equilibrium import (
    RESTRICTED,
    classify_fixed_point,
    construct_equilibrium,
    equilibrium_exists,
    path_flows,
    wardrop_check,
)
from approute.network import RoutingState, build_network, enumerate_paths, min_cut_capacity
from approute.passivity import routing_storage, traffic_storage
from approute.scenario import Scenario
from approute.simulate import IntegratorConfig, integrate

from oracles import (
    all_paths,
    link_flows_by_propagation,
    min_cut_bruteforce,
    perceived_bruteforce,
    random_dag_specs,
    random_ratios,
)

SETTINGS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
seeds = st.integers(0, 2**32 - 1)
pos = st.floats(0.05, 20.0, allow_nan=False)

laws = st.one_of(
    st.builds(OutflowLaw.saturated_linear, pos, pos),
    st.builds(OutflowLaw.linear, pos),
    st.builds(OutflowLaw.exponential, pos, pos),
)


@SETTINGS
@given(laws, st.lists(st.floats(0, 1e3, allow_nan=False), min_size=2, max_size=30))
def test_outflow_bounded_monotone(law, xs):
    xs = sorted(xs)
    fs = [outflow(law, x) for x in xs]
    cap = law.C if law.C is not None else math.inf
    assert all(0 <= f <= cap for f in fs)
    assert all(a <= b for a, b in zip(fs, fs[1:]))


@SETTINGS
@given(pos, st.floats(0, 100), st.floats(0.1, 50), st.lists(st.floats(0, 0.999), min_size=2, max_size=20))
def test_costs_non_decreasing(slope, intercept, crit, fracs):
    xs = sorted(f * crit for f in fracs)
    for law in (TravelCostLaw.affine(slope, intercept), TravelCostLaw.barrier(slope, intercept, crit)):
        cs = [travel_cost(law, x) for x in xs]
        assert all(a <= b for a, b in zip(cs, cs[1:]))


def _random_scenario(seed, alpha=0.0):
    rng = np.random.default_rng(seed)
    specs, s, d = random_dag_specs(rng)
    net = build_network(specs, s, d)
    params = {
        l: LinkParams(
            OutflowLaw.saturated_linear(float(rng.uniform(0.5, 2)), float(rng.uniform(0.5, 5))),
            TravelCostLaw.affine(float(rng.integers(1, 10)), float(rng.integers(0, 20))),
            alpha,
        )
        for l in net.links
    }
    x = rng.uniform(0, 10, net.n_links)
    r = RoutingState.from_mapping(net, random_ratios(rng, specs))
    sc = Scenario("random", net, params, float(rng.uniform(0, 3)), x, r)
    return rng, specs, sc


@SETTINGS
@given(seeds)
def test_perceived_matches_path_tails(seed):
    rng, specs, sc = _random_scenario(seed)
    net = sc.network
    tau = {l: travel_cost(sc.params[l].cost, xl) for l, xl in zip(net.links, sc.x0)}
    pi = perceived_costs(net, sc.x0, sc.params).as_dict()
    assert pi == perceived_bruteforce(specs, net.source, net.destination, tau)
    assert pi[net.destination] == tau[net.destination]
    # costs never increase towards the destination along the cheapest branch
    for l in net.junctions:
        assert pi[l] >= min(pi[m] for m in net.downstream[l])


@SETTINGS
@given(seeds, st.sampled_from([RatePolicy.constant(1.0), RatePolicy.constant(3.5), RatePolicy.local(0.01)]))
def test_replicator_preserves_simplex(seed, policy):
    _, _, sc = _random_scenario(seed)
    net = sc.network
    pi = perceived_costs(net, sc.x0, sc.params)
    dr = routing_rhs(net, sc.r0, pi, policy)
    a = appeals(net, sc.r0, pi)
    for l in net.junctions:
        ks = [net.ramp_index[(l, m)] for m in net.downstream[l]]
        assert abs(dr[ks].sum()) <= 1e-12 * max(1.0, np.abs(dr[ks]).max())
        assert abs(np.dot(sc.r0.values[ks], a[ks])) <= 1e-12 * max(1.0, np.abs(pi.values).max())


@SETTINGS
@given(seeds)
def test_paths_and_cut_match_oracles(seed):
    rng, specs, sc = _random_scenario(seed)
    net = sc.network
    ps = enumerate_paths(net)
    assert list(ps.paths) == all_paths(specs, net.source, net.destination)
    assert np.all(ps.incidence.sum(axis=1) > 0)
    assert len(set(ps.paths)) == len(ps)
    caps = {l: float(rng.integers(1, 9)) for l in net.links}
    assert min_cut_capacity(net, caps) == min_cut_bruteforce(specs, net.source, net.destination, caps)


@SETTINGS
@given(seeds, st.floats(0, 10))
def test_path_flows_reconstruct_links(seed, inflow):
    _, specs, sc = _random_scenario(seed)
    net = sc.network
    ps = enumerate_paths(net)
    fp = path_flows(net, ps, sc.r0, inflow)
    assert np.all(fp >= 0)
    want = link_flows_by_propagation(specs, net.source, dict(sc.r0.items()), inflow)
    got = ps.incidence @ fp
    for l in net.links:
        assert got[net.index[l]] == pytest.approx(want[l], rel=1e-12, abs=1e-12)


@SETTINGS
@given(seeds, st.floats(0, 20), st.floats(0, 20))
def test_exists_monotone_in_inflow(seed, a, b):
    lo, hi = sorted((a, b))
    _, _, sc = _random_scenario(seed)
    for bounded in (True, False):
        if equilibrium_exists(sc.network, sc.capacities, hi, bounded):
            assert equilibrium_exists(sc.network, sc.capacities, lo, bounded)


@SETTINGS
@given(seeds, st.floats(0.0, 1.0))
def test_constructed_point_is_traffic_fixed_point(seed, frac):
    _, _, sc = _random_scenario(seed)
    cut = min_cut_capacity(sc.network, sc.capacities)
    inflow = frac * float(cut)
    eq = construct_equilibrium(sc, inflow)
    dx = traffic_rhs(sc.network, eq.x_star, eq.r_star, inflow, sc.params)
    assert np.max(np.abs(dx)) <= 1e-8
    for l, xl, f in zip(sc.network.links, eq.x_star, eq.flows):
        assert outflow(sc.params[l].outflow, xl) == pytest.approx(f, abs=1e-9)


@SETTINGS
@given(seeds)
def test_routing_storage_nonnegative(seed):
    rng, specs, sc = _random_scenario(seed)
    other = RoutingState.from_mapping(sc.network, random_ratios(rng, specs))
    assert routing_storage(sc.r0, other) >= 0
    assert routing_storage(other, other) == 0


@SETTINGS
@given(seeds, st.integers(0, 7), st.floats(0.0, 5.0))
def test_traffic_storage_monotone_in_each_density(seed, which, bump):
    _, _, sc = _random_scenario(seed)
    x = sc.x0.copy()
    assert traffic_storage(sc, x) >= 0
    y = x.copy()
    y[which % len(x)] += bump
    assert traffic_storage(sc, y) >= traffic_storage(sc, x) - 1e-12


# -- restricted equilibria and Wardrop points on parallel roads ---------------


def _parallel(k, slopes, intercepts, speeds, inflow):
    specs = [(1, "o", "a")] + [(i + 2, "a", "b") for i in range(k)] + [(k + 2, "b", "d")]
    net = build_network(specs, 1, k + 2)
    params = {1: LinkParams(OutflowLaw.linear(), TravelCostLaw.affine(1.0)),
              k + 2: LinkParams(OutflowLaw.linear(), TravelCostLaw.affine(1.0))}
    for i in range(k):
        params[i + 2] = LinkParams(OutflowLaw.linear(speeds[i]), TravelCostLaw.affine(slopes[i], intercepts[i]))
    return Scenario("parallel", net, params, inflow, np.zeros(k + 2), RoutingState.uniform(net))


def _state(sc, shares):
    k = len(shares)
    net = sc.network
    x = np.empty(k + 2)
    x[0] = x[-1] = sc.inflow
    for i, s in enumerate(shares):
        x[i + 1] = s * sc.inflow / sc.params[i + 2].outflow.v
    r = RoutingState.from_mapping(net, {(1, i + 2): s for i, s in enumerate(shares)})
    return x, r


def _road_costs(sc, shares):
    x, _ = _state(sc, shares)
    return np.array([travel_cost(sc.params[i + 2].cost, x[i + 1]) for i in range(len(shares))])


def _grid_equilibrium(sc):
    """Two roads: scan the split, then refine the sign change of the cost gap."""
    gap = lambda s: float(np.subtract(*_road_costs(sc, [s, 1 - s])))  # noqa: E731
    grid = np.linspace(0, 1, 201)
    g = [gap(s) for s in grid]
    if g[0] >= 0:
        return 0.0
    if g[-1] <= 0:
        return 1.0
    i = next(i for i in range(200) if g[i] < 0 <= g[i + 1])
    return brentq(gap, grid[i], grid[i + 1], xtol=1e-15, rtol=1e-15)


@SETTINGS
@given(
    st.lists(st.floats(0.5, 5), min_size=2, max_size=2),
    st.lists(st.integers(0, 30), min_size=2, max_size=2),
    st.lists(st.floats(0.5, 2), min_size=2, max_size=2),
    st.floats(0.2, 10),
)
def test_restricted_iff_wardrop(slopes, intercepts, speeds, inflow):
    sc = _parallel(2, slopes, [float(b) for b in intercepts], speeds, inflow)
    s = _grid_equilibrium(sc)
    x, r = _state(sc, [s, 1 - s])
    cls = classify_fixed_point(sc, x, r)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = wardrop_check(sc, x, r)
    if cls.kind == RESTRICTED:
        assert rep.wardrop
    costs = _road_costs(sc, [s, 1 - s])
    assume(abs(costs[0] - costs[1]) > 1e-6 or 1e-9 < s < 1 - 1e-9)
    if rep.wardrop and cls.traffic_residual <= 1e-8 and cls.routing_residual <= 1e-8:
        assert cls.kind == RESTRICTED
    # a split away from the equilibrium is neither
    off = min(1.0, s + 0.2) if s < 0.5 else max(0.0, s - 0.2)
    x2, r2 = _state(sc, [off, 1 - off])
    c2 = _road_costs(sc, [off, 1 - off])
    if abs(c2[0] - c2[1]) > 1e-6 and 0 < off < 1:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert not wardrop_check(sc, x2, r2).wardrop
        assert classify_fixed_point(sc, x2, r2).kind != RESTRICTED


# -- integration --------------------------------------------------------------


@pytest.mark.parametrize("name", list(BUILTINS))
def test_builtins_coarse_step_invariants(name):
    sc = builtin(name)
    cfg = IntegratorConfig(dt=1e-2, t_end=min(sc.integrator.t_end, 100.0), record_stride=1)
    tr = integrate(sc, cfg)
    assert tr.max_residual <= 1e-7
    assert np.max(tr.clamp) == 0
    assert np.all(np.diff(tr.times) > 0)
    assert np.all(tr.x >= 0)


@pytest.mark.parametrize("name", ["two-link-freeflow", "two-link-capacitated"])
def test_constructed_equilibrium_is_held(name):
    sc = builtin(name)
    eq = construct_equilibrium(sc)
    dt, t_end = 1e-2, 50.0
    tr = integrate(sc.with_state(eq.x_star, eq.r_star), IntegratorConfig(dt=dt, t_end=t_end))
    dev = max(np.abs(tr.x - eq.x_star).max(), np.abs(tr.r - eq.r_star.values).max())
    assert dev <= 10 * dt ** 4 * t_end


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_integration_deterministic(seed):
    _, _, sc = _random_scenario(seed)
    cfg = IntegratorConfig(dt=1e-2, t_end=2.0)
    a, b = integrate(sc, cfg), integrate(sc, cfg)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.r, b.r)


@pytest.mark.parametrize("eps", [1e-4, 1e-3])
def test_positive_appeal_grows_immediately(eps):
    sc = builtin("lemma3-unstable")
    x, r = sc.reference
    net = sc.network
    moved = r.replace({(1, 2): eps, (1, 3): 1 - eps})
    pi = perceived_costs(net, x, sc.params)
    dr = routing_rhs(net, moved, pi, sc.policy)
    k = net.ramp_index[(1, 2)]
    assert dr[k] > 0
    assert dr[k] == pytest.approx(eps * (1 - eps) * (pi[3] - pi[2]), rel=1e-12)
