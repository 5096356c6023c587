"""Existence, construction and classification of equilibria, and the Wardrop
check on path costs."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    BarrierExceeded,
    OutflowLaw,
    appeals,
    perceived_costs,
    routing_rhs,
    traffic_rhs,
    travel_cost,
)
from .network import (
    UNBOUNDED,
    PathSet,
    RoutingState,
    TrafficNetwork,
    as_routing,
    enumerate_paths,
    max_link_flows,
    min_cut_capacity,
)

__all__ = [
    "NoEquilibrium",
    "InversionFailure",
    "EquilibriumPoint",
    "Classification",
    "WardropReport",
    "equilibrium_exists",
    "construct_equilibrium",
    "invert_outflow",
    "classify_fixed_point",
    "path_flows",
    "wardrop_check",
    "RESTRICTED",
    "UNSTABLE_POSITIVE_APPEAL",
    "NOT_A_FIXED_POINT",
]

RESTRICTED = "restricted"
UNSTABLE_POSITIVE_APPEAL = "unstable-positive-appeal"
NOT_A_FIXED_POINT = "not-a-fixed-point"

RHS_TOL = 1e-8
APPEAL_TOL = 1e-8
RATIO_TOL = 1e-10
FLOW_TOL = 1e-12


class NoEquilibrium(ValueError):
    pass


class InversionFailure(ValueError):
    pass


@dataclass(frozen=True)
class Classification:
    kind: str
    appeals: dict  # ramp -> appeal value
    branches: dict  # ramp -> "zero-appeal" | "unused-negative-appeal" | "unused-positive-appeal" | "violated"
    traffic_residual: float
    routing_residual: float

    def __str__(self):
        return self.kind


@dataclass(frozen=True, eq=False)
class EquilibriumPoint:
    x_star: np.ndarray
    r_star: RoutingState
    flows: np.ndarray
    classification: str
    appeal_report: Classification


@dataclass(frozen=True, eq=False)
class WardropReport:
    paths: tuple
    path_flows: np.ndarray
    path_costs: np.ndarray
    wardrop: bool
    witness: tuple | None  # (used path, cheaper path) when violated


def equilibrium_exists(net: TrafficNetwork, capacities, inflow: float, costs_bounded: bool = True) -> bool:
    """Whether the inflow fits through the network: ``inflow <= min-cut``,
    strictly below it when some travel cost diverges at finite density."""
    if inflow < 0:
        raise ValueError("inflow must be non-negative")
    if inflow == 0:
        return True
    cut = min_cut_capacity(net, capacities)
    if cut is UNBOUNDED:
        return True
    return inflow <= cut if costs_bounded else inflow < cut


def invert_outflow(law, phi: float, tol: float = 1e-12) -> float:
    """Smallest density whose outflow equals ``phi``.

    ``law`` is an OutflowLaw (closed-form inverse) or any non-decreasing
    callable, which is inverted by bracketing and root finding.
    """
    if phi < 0:
        raise InversionFailure(f"flow {phi} is negative")
    if not isinstance(law, OutflowLaw):
        return _invert_monotone(law, phi, tol)
    C = law.C
    if C is not None:
        if phi > C * (1 + 1e-15):
            raise InversionFailure(f"flow {phi} exceeds capacity {C}")
        phi = min(phi, C)
    if law.kind == "exponential-saturation":
        if phi >= C:
            raise InversionFailure(f"flow {phi} equals the asymptotic capacity {C}; no finite density")
        return -math.log1p(-phi / C) / law.a
    return phi / law.v


def _invert_monotone(f, phi: float, tol: float) -> float:
    if f(0.0) >= phi:
        return 0.0
    hi = 1.0
    while f(hi) < phi:
        hi *= 2
        if hi > 1e15:
            raise InversionFailure(f"flow {phi} is never reached")
    # smallest preimage: bisect on the predicate f(s) >= phi
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if f(mid) >= phi - tol:
            hi = mid
        else:
            lo = mid
    return hi


def _propagate(net: TrafficNetwork, r: RoutingState, inflow: float) -> dict:
    """Link flows induced by ratios ``r`` when each link passes on its inflow."""
    phi = {l: 0.0 for l in net.links}
    phi[net.source] = inflow
    for l in net.links:
        for m in net.downstream[l]:
            phi[m] += r[(l, m)] * phi[l]
    return phi


def _fits(scenario, phi: dict) -> bool:
    for l, f in phi.items():
        law = scenario.params[l].outflow
        C = law.C
        if C is not None and (f > C or (law.saturates_asymptotically and f >= C)):
            return False
    return True


def _ratios_from_flows(net: TrafficNetwork, phi: dict) -> RoutingState:
    vals = {}
    for l in net.junctions:
        out = net.downstream[l]
        total = sum(phi[m] for m in out)
        for m in out:
            vals[(l, m)] = phi[m] / total if total > FLOW_TOL else 1.0 / len(out)
    return RoutingState.from_mapping(net, vals)


def construct_equilibrium(scenario, inflow: float | None = None) -> EquilibriumPoint:
    """One equilibrium of the traffic dynamics for the given inflow.

    Tries the uniform split first; if that overloads a link, routes a
    maximum flow capped at the inflow instead. Ratios follow the link flows
    out of each junction and densities invert each outflow law. The result
    is a fixed point of the densities but in general not a Wardrop point.
    """
    net = scenario.network
    inflow = scenario.inflow if inflow is None else float(inflow)
    if not equilibrium_exists(net, scenario.capacities, inflow, scenario.costs_bounded):
        raise NoEquilibrium(f"inflow {inflow:g} exceeds the min-cut capacity {min_cut_capacity(net, scenario.capacities)}")
    r = RoutingState.uniform(net)
    phi = _propagate(net, r, inflow)
    if not _fits(scenario, phi):
        phi = max_link_flows(net, scenario.capacities, inflow)
        r = _ratios_from_flows(net, phi)
    x = np.array([invert_outflow(scenario.params[l].outflow, phi[l]) for l in net.links])
    for l, xl in zip(net.links, x):
        cost = scenario.params[l].cost
        if cost.kind == "barrier" and xl >= cost.critical:
            raise NoEquilibrium(f"link {l} would sit at or past its critical density")
    cls = classify_fixed_point(scenario, x, r, inflow)
    flows = np.array([phi[l] for l in net.links])
    return EquilibriumPoint(x, r, flows, cls.kind, cls)


def classify_fixed_point(scenario, x, r, inflow: float | None = None) -> Classification:
    net = scenario.network
    inflow = scenario.inflow if inflow is None else float(inflow)
    x = np.asarray(x, dtype=float)
    r = as_routing(net, r)
    pi = perceived_costs(net, x, scenario.params)
    dx = traffic_rhs(net, x, r, inflow, scenario.params)
    with np.errstate(invalid="ignore"):
        dr = routing_rhs(net, r, pi, scenario.policy)
    a = appeals(net, r, pi)
    tres = float(np.max(np.abs(dx), initial=0.0))
    rres = float(np.max(np.abs(dr), initial=0.0)) if np.all(np.isfinite(dr)) else math.inf
    appeal_map = {ramp: float(v) for ramp, v in zip(net.ramps, a)}
    branches = {}
    positive_unused = False
    for k, ramp in enumerate(net.ramps):
        if abs(a[k]) <= APPEAL_TOL:
            branches[ramp] = "zero-appeal"
        elif r.values[k] <= RATIO_TOL:
            if a[k] < 0:
                branches[ramp] = "unused-negative-appeal"
            else:
                branches[ramp] = "unused-positive-appeal"
                positive_unused = True
        else:
            branches[ramp] = "violated"
    if tres > RHS_TOL or rres > RHS_TOL:
        kind = NOT_A_FIXED_POINT
    elif positive_unused:
        kind = UNSTABLE_POSITIVE_APPEAL
    else:
        kind = RESTRICTED
    return Classification(kind, appeal_map, branches, tres, rres)


def path_flows(net: TrafficNetwork, pathset: PathSet | None, r, inflow: float) -> np.ndarray:
    """Flow on each path: the inflow times the ratios along its ramps."""
    pathset = pathset or enumerate_paths(net)
    r = as_routing(net, r)
    out = np.empty(len(pathset))
    for p, path in enumerate(pathset.paths):
        f = float(inflow)
        for l, m in zip(path, path[1:]):
            f *= r[(l, m)]
        out[p] = f
    return out


def wardrop_check(scenario, x_star, r_star, inflow: float | None = None, pathset: PathSet | None = None) -> WardropReport:
    """Every used path must cost no more than any other path (tol 1e-8)."""
    net = scenario.network
    inflow = scenario.inflow if inflow is None else float(inflow)
    if any(scenario.params[l].alpha != 0 for l in net.links):
        warnings.warn("perceived costs use alpha != 0; Wardrop correspondence is not guaranteed", stacklevel=2)
    r_star = as_routing(net, r_star)
    pathset = pathset or enumerate_paths(net)
    cls = classify_fixed_point(scenario, x_star, r_star, inflow)
    if cls.kind != RESTRICTED:
        warnings.warn(f"state is {cls.kind}, not a restricted equilibrium", stacklevel=2)
    tau = {}
    for l, xl in zip(net.links, np.asarray(x_star, dtype=float)):
        try:
            tau[l] = travel_cost(scenario.params[l].cost, xl)
        except BarrierExceeded:
            tau[l] = math.inf
    costs = np.array([sum(tau[l] for l in p) for p in pathset.paths])
    flows = path_flows(net, pathset, r_star, inflow)
    cheapest = int(np.argmin(costs))
    witness = None
    for p in range(len(pathset)):
        if flows[p] > 1e-10 and costs[p] > costs[cheapest] + 1e-8:
            witness = (pathset.paths[p], pathset.paths[cheapest])
            break
    return WardropReport(pathset.paths, flows, costs, witness is None, witness)
