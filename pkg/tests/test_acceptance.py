"""Acceptance criteria, each at its stated tolerance. Every test records a
PASS/FAIL line with the measured numbers; the lines are repeated in the
terminal summary."""

import csv
import time

import numpy as np
import pytest

from approute.builtins import BUILTINS, SEVEN_LINK_EQUILIBRIUM, builtin, seven_link
from approute.cli import compare_csv
from approute.dynamics import RatePolicy, perceived_costs, routing_rhs, traffic_rhs, travel_cost
from approute.equilibrium import RESTRICTED, classify_fixed_point, construct_equilibrium, equilibrium_exists, path_flows, wardrop_check
from approute.network import build_network, enumerate_paths, min_cut_capacity
from approute.passivity import detect_oscillation, passivity_audit, stability_probe, two_link_invariant
from approute.simulate import IntegratorConfig, integrate

from acceptance_registry import record
from oracles import (
    all_paths,
    link_flows_by_propagation,
    min_cut_bruteforce,
    perceived_bruteforce,
    random_dag_specs,
    random_ratios,
)
from test_properties import _random_scenario

X_STAR, R_STAR = SEVEN_LINK_EQUILIBRIUM
R_STAR_VALUES = np.array([R_STAR.get(k, 1.0) for k in builtin("seven-link").network.ramps])


def test_01_seven_link_equilibrium():
    sc = builtin("seven-link")
    net = sc.network
    t0 = time.perf_counter()
    dx = traffic_rhs(net, X_STAR, R_STAR, 6.0, sc.params)
    dr = routing_rhs(net, R_STAR, perceived_costs(net, X_STAR, sc.params), sc.policy)
    cls = classify_fixed_point(sc, X_STAR, R_STAR)
    rep = wardrop_check(sc, X_STAR, R_STAR)
    elapsed = time.perf_counter() - t0
    ok = (
        np.max(np.abs(dx)) <= 1e-10
        and np.max(np.abs(dr)) <= 1e-10
        and cls.kind == RESTRICTED
        and rep.wardrop
        and np.all(np.abs(rep.path_costs - 104) <= 1e-8)
        and elapsed < 1.0
    )
    record(
        "1 seven-link equilibrium",
        ok,
        f"|dx|={np.max(np.abs(dx)):.1e} |dr|={np.max(np.abs(dr)):.1e} {cls.kind} "
        f"wardrop={rep.wardrop} costs={rep.path_costs.tolist()} {elapsed:.3f}s",
    )
    assert ok


def test_02_oscillation():
    sc = seven_link(r12=0.9, t_end=200.0)
    t0 = time.perf_counter()
    tr = integrate(sc, IntegratorConfig(dt=1e-3, t_end=200.0, record_stride=10))
    ox, orr = detect_oscillation(tr.x_of(2)), detect_oscillation(tr.r_of((1, 2)))
    elapsed = time.perf_counter() - t0
    ok = ox.verdict == orr.verdict == "oscillating" and ox.decay < 0.05 and orr.decay < 0.05 and elapsed < 30
    record(
        "2 oscillation",
        ok,
        f"x_2 {ox.verdict} decay={ox.decay:.2e}; r_12 {orr.verdict} decay={orr.decay:.2e}; {elapsed:.2f}s",
    )
    assert ok


def test_03_stabilization():
    sc = seven_link(RatePolicy.local(0.01), r12=0.9, t_end=500.0)
    t0 = time.perf_counter()
    tr = integrate(sc, IntegratorConfig(dt=1e-3, t_end=500.0, record_stride=100))
    elapsed = time.perf_counter() - t0
    fin = tr.final
    dist = max(np.abs(fin.x - X_STAR).max(), np.abs(fin.r.values - R_STAR_VALUES).max())
    ok = dist <= 1e-3 and elapsed < 60
    record("3 stabilization (kappa=0.01)", ok, f"final distance {dist:.3e} at t=500 (need <= 1e-3); {elapsed:.2f}s")
    assert ok


def _drift(dt):
    sc = builtin("two-link-congested")
    return two_link_invariant(integrate(sc, IntegratorConfig(dt=dt, t_end=30.0, record_stride=max(1, int(round(0.01 / dt))))))


def test_04_constant_of_motion():
    base = _drift(1e-3)
    coarse, fine = _drift(1e-2), _drift(5e-3)
    ratio = coarse.drift / fine.drift
    ok = base.orbits >= 3 and base.drift <= 1e-5 and ratio >= 8
    record(
        "4 constant of motion",
        ok,
        f"drift {base.drift:.2e} over {base.orbits} orbits at dt=1e-3; "
        f"dt 1e-2 -> 5e-3 shrink x{ratio:.1f}",
    )
    assert ok


def test_05_capacity_dichotomy():
    sc = builtin("two-link-capacitated")
    C = 1.0
    eq = construct_equilibrium(sc, 1.9 * C)
    res = np.max(np.abs(traffic_rhs(sc.network, eq.x_star, eq.r_star, 1.9 * C, sc.params)))
    over = 2.1 * C
    exists = equilibrium_exists(sc.network, sc.capacities, over, sc.costs_bounded)
    horizon = 100.0
    tr = integrate(sc.replace(inflow=over), IntegratorConfig(dt=1e-3, t_end=horizon, record_stride=10))
    top = tr.x.max(axis=1)
    half = tr.times >= horizon / 2
    growth = np.polyfit(tr.times[half], top[half], 1)[0]
    ok = res <= 1e-8 and not exists and growth >= 0.05 * C
    record(
        "5 capacity dichotomy",
        ok,
        f"1.9C residual {res:.1e}; 2.1C exists={exists}, max density grows {growth:.4f}/time (need >= 0.05)",
    )
    assert ok


def test_06_simplex_invariance():
    worst = {}
    for name in BUILTINS:
        sc = builtin(name)
        tr = integrate(sc, IntegratorConfig(dt=1e-3, t_end=sc.integrator.t_end, record_stride=sc.integrator.record_stride))
        worst[name] = tr.max_residual
    ok = max(worst.values()) <= 1e-7
    record("6 simplex invariance", ok, f"max pre-renormalization residual {max(worst.values()):.2e}")
    assert ok


def test_07_positive_appeal_instability():
    sc = builtin("lemma3-unstable")
    x, r = sc.reference
    net = sc.network
    moved = r.replace({(1, 2): 1e-3, (1, 3): 1 - 1e-3})
    rdot = routing_rhs(net, moved, perceived_costs(net, x, sc.params), sc.policy)[net.ramp_index[(1, 2)]]
    verdict = stability_probe(sc, radii=(1e-3,), horizon=20.0)
    ok = rdot > 0 and verdict.kind == "unstable"
    record("7 positive-appeal instability", ok, f"r12' = {rdot:.3e} at t=0; probe {verdict.kind}")
    assert ok


def test_08_passivity_audits():
    congested = integrate(builtin("two-link-congested"))
    seven = integrate(builtin("seven-link"))
    finite = integrate(seven_link(capacity=20.0))
    controlled = integrate(builtin("seven-link-controlled"))
    audits = {
        "congested routing": passivity_audit(congested, "routing"),
        "congested traffic": passivity_audit(congested, "traffic"),
        "seven routing": passivity_audit(seven, "routing"),
        "seven(C=20) traffic": passivity_audit(finite, "traffic"),
        "controlled input-strict": passivity_audit(controlled, "routing", "input-strict"),
    }
    ok = all(a.ok for a in audits.values())
    record("8 passivity audits", ok, "; ".join(f"{k} {'ok' if a.ok else 'FAIL'}" for k, a in audits.items()))
    assert ok


def test_09_oracle_equivalence():
    bad = []
    for seed in range(50):
        rng, specs, sc = _random_scenario(seed)
        net = sc.network
        s, d = net.source, net.destination
        ps = enumerate_paths(net)
        if list(ps.paths) != all_paths(specs, s, d):
            bad.append((seed, "paths"))
        caps = {l: float(rng.integers(1, 9)) for l in net.links}
        if min_cut_capacity(net, caps) != min_cut_bruteforce(specs, s, d, caps):
            bad.append((seed, "min-cut"))
        tau = {l: travel_cost(sc.params[l].cost, xl) for l, xl in zip(net.links, sc.x0)}
        if perceived_costs(net, sc.x0, sc.params).as_dict() != perceived_bruteforce(specs, s, d, tau):
            bad.append((seed, "perceived"))
        r = random_ratios(rng, specs)
        got = ps.incidence @ path_flows(net, ps, r, 3.0)
        want = link_flows_by_propagation(specs, s, r, 3.0)
        if any(abs(got[net.index[l]] - want[l]) > 1e-12 for l in net.links):
            bad.append((seed, "path flows"))
    ok = not bad
    record("9 oracle equivalence", ok, f"50 random DAGs, mismatches: {bad or 'none'}")
    assert ok


def test_10_compare(tmp_path):
    tr = integrate(builtin("two-link-freeflow"))
    sim = tmp_path / "sim.csv"
    tr.to_csv(sim)
    with open(sim) as fh:
        rows = list(csv.reader(fh))
    j = rows[0].index("x_2")
    for row in rows[1:]:
        row[j] = repr(float(row[j]) + 1.0)
    shifted = tmp_path / "shifted.csv"
    with open(shifted, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    ident = compare_csv(sim, sim)
    shift = compare_csv(sim, shifted)
    others = [v for k, v in shift.rmse.items() if k != "x_2"]
    ok = max(ident.rmse.values()) == 0 and abs(shift.rmse["x_2"] - 1.0) <= 1e-12 and max(others) == 0
    record("10 synthetic comparison", ok, f"identity rmse {max(ident.rmse.values())}; shifted x_2 rmse {shift.rmse['x_2']!r}")
    assert ok
