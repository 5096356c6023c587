"""Built-in scenarios: the two-link network in its three regimes, the
seven-link network with constant and congestion-aware rates, and a
two-link equilibrium that routes everyone onto the costlier road."""

from __future__ import annotations

import numpy as np

from .dynamics import LinkParams, OutflowLaw, RatePolicy, TravelCostLaw
from .network import RoutingState, build_network
from .scenario import Scenario
from .simulate import IntegratorConfig

__all__ = ["BUILTINS", "builtin", "builtin_names", "seven_link", "two_link", "SEVEN_LINK_EQUILIBRIUM"]

SEVEN_LINK_SPECS = [
    (1, "o", "v1"),
    (2, "v1", "v2"),
    (3, "v1", "v3"),
    (4, "v2", "v3"),
    (5, "v2", "v4"),
    (6, "v3", "v4"),
    (7, "v4", "d"),
]
SEVEN_LINK_SLOPES = (1.0, 10.0, 1.0, 1.0, 1.0, 10.0, 1.0)
SEVEN_LINK_INTERCEPTS = (0.0, 0.0, 50.0, 10.0, 50.0, 0.0, 0.0)
SEVEN_LINK_INFLOW = 6.0
SEVEN_LINK_EQUILIBRIUM = (
    np.array([6.0, 4.0, 2.0, 2.0, 2.0, 4.0, 6.0]),
    {(1, 2): 2 / 3, (1, 3): 1 / 3, (2, 4): 0.5, (2, 5): 0.5},
)
# congestion-aware gain small enough for the equilibrium to attract
CONTROLLED_KAPPA = 1e-3

TWO_LINK_SPECS = [(1, "o", "a"), (2, "a", "b"), (3, "a", "b"), (4, "b", "d")]


def seven_link(policy: RatePolicy | None = None, capacity: float | None = None, r12: float = 0.9, **integ) -> Scenario:
    """Seven-link network with affine costs; linear outflows unless a finite
    ``capacity`` is given, in which case every link saturates at it."""
    net = build_network(SEVEN_LINK_SPECS, 1, 7)
    law = OutflowLaw.linear() if capacity is None else OutflowLaw.saturated_linear(1.0, capacity)
    params = {
        l: LinkParams(law, TravelCostLaw.affine(a, b))
        for l, a, b in zip(net.links, SEVEN_LINK_SLOPES, SEVEN_LINK_INTERCEPTS)
    }
    x_star, r_star = SEVEN_LINK_EQUILIBRIUM
    r_star = RoutingState.from_mapping(net, r_star)
    r0 = r_star.replace({(1, 2): r12, (1, 3): 1.0 - r12})
    cfg = dict(dt=1e-3, t_end=200.0, record_stride=10)
    cfg.update(integ)
    return Scenario(
        name="seven-link",
        network=net,
        params=params,
        inflow=SEVEN_LINK_INFLOW,
        x0=x_star.copy(),
        r0=r0,
        policy=policy or RatePolicy.constant(1.0),
        integrator=IntegratorConfig(**cfg),
        reference=(x_star.copy(), r_star),
    )


def two_link(
    inflow: float,
    caps=(4.0, 1.0, 1.0, 4.0),
    intercepts=(0.0, 0.0, 0.0, 0.0),
    x0=None,
    r12: float = 0.9,
    reference=None,
    linear: bool = False,
    name: str = "two-link",
    description: str = "",
    **integ,
) -> Scenario:
    """Two parallel roads between a feeder and an exit link; costs tau = x + b."""
    net = build_network(TWO_LINK_SPECS, 1, 4)
    params = {}
    for l, c, b in zip(net.links, caps, intercepts):
        law = OutflowLaw.linear() if linear else OutflowLaw.saturated_linear(1.0, c)
        params[l] = LinkParams(law, TravelCostLaw.affine(1.0, b))
    r0 = RoutingState.from_mapping(net, {(1, 2): r12, (1, 3): 1.0 - r12})
    cfg = dict(dt=1e-3, t_end=30.0, record_stride=10)
    cfg.update(integ)
    ref = None
    if reference is not None:
        ref = (np.asarray(reference[0], dtype=float), RoutingState.from_mapping(net, reference[1]))
    return Scenario(
        name=name,
        network=net,
        params=params,
        inflow=float(inflow),
        x0=np.zeros(4) if x0 is None else np.asarray(x0, dtype=float),
        r0=r0,
        policy=RatePolicy.constant(1.0),
        integrator=IntegratorConfig(**cfg),
        reference=ref,
        description=description,
    )


def _two_link_congested():
    # both roads past capacity; routing swings the excess back and forth
    return two_link(
        2.0, x0=(2.0, 4.0, 4.0, 2.0), r12=0.9, name="two-link-congested",
        reference=((2.0, 4.0, 4.0, 2.0), {(1, 2): 0.5, (1, 3): 0.5}),
        description="congested parallel roads; periodic orbit with a constant of motion",
    )


def _two_link_freeflow():
    return two_link(
        0.5, caps=(1.0, 1.0, 1.0, 1.0), x0=(0.5, 0.1, 0.4, 0.5), r12=0.7, name="two-link-freeflow",
        reference=((0.5, 0.25, 0.25, 0.5), {(1, 2): 0.5, (1, 3): 0.5}),
        description="uncongested parallel roads; converges to the symmetric equilibrium",
    )


def _two_link_capacitated():
    return two_link(
        1.5, caps=(2.0, 1.0, 1.0, 2.0), r12=0.5, name="two-link-capacitated",
        reference=((1.5, 0.75, 0.75, 1.5), {(1, 2): 0.5, (1, 3): 0.5}),
        description="min-cut 2 over the parallel pair; inflow 1.5",
    )


def _lemma3_unstable():
    x = (1.0, 0.0, 1.0, 1.0)
    return two_link(
        1.0, intercepts=(0.0, 0.0, 50.0, 0.0), linear=True, x0=x, r12=0.0, name="lemma3-unstable",
        reference=(x, {(1, 2): 0.0, (1, 3): 1.0}), t_end=20.0,
        description="all flow on the costlier road; an unused cheaper road attracts",
    )


def _seven_link():
    sc = seven_link()
    return sc.replace(description="affine costs, constant rates; oscillates around the Wardrop point")


def _seven_link_controlled():
    sc = seven_link(RatePolicy.local(CONTROLLED_KAPPA), t_end=500.0)
    return sc.replace(
        name="seven-link-controlled",
        description="congestion-aware rates; converges to the Wardrop point",
    )


BUILTINS = {
    "two-link-congested": _two_link_congested,
    "two-link-freeflow": _two_link_freeflow,
    "two-link-capacitated": _two_link_capacitated,
    "seven-link": _seven_link,
    "seven-link-controlled": _seven_link_controlled,
    "lemma3-unstable": _lemma3_unstable,
}


def builtin_names() -> list:
    return list(BUILTINS)


def builtin(name: str) -> Scenario:
    try:
        return BUILTINS[name]()
    except KeyError:
        raise KeyError(f"unknown built-in {name!r}; choose from {', '.join(BUILTINS)}") from None
