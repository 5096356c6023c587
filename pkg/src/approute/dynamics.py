"""Pointwise model evaluation: outflows, travel costs, perceived costs, appeals,
reaction rates and the right-hand sides of the coupled traffic/routing ODEs.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .network import UNBOUNDED, RoutingState, TrafficNetwork, is_unbounded

__all__ = [
    "NegativeDensity",
    "BarrierExceeded",
    "NotARamp",
    "OutflowLaw",
    "TravelCostLaw",
    "RatePolicy",
    "LinkParams",
    "PerceivedCosts",
    "outflow",
    "travel_cost",
    "perceived_costs",
    "appeal",
    "appeals",
    "traffic_rhs",
    "routing_rhs",
    "reaction_rate",
    "reaction_rates",
    "compile_model",
]

RATE_FLOOR = 1e-9


class NegativeDensity(ValueError):
    pass


class BarrierExceeded(ArithmeticError):
    """Density at or above the critical density of a barrier cost."""


class NotARamp(KeyError):
    pass


@dataclass(frozen=True)
class OutflowLaw:
    """Link outflow as a function of density.

    kinds: ``saturated-linear`` min(v x, C); ``linear`` v x (unbounded
    capacity); ``exponential-saturation`` C (1 - exp(-a x)).
    """

    kind: str
    v: float = 1.0
    C: float | None = None
    a: float = 1.0

    KINDS = ("saturated-linear", "linear", "exponential-saturation")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown outflow kind {self.kind!r}")
        if self.kind in ("saturated-linear", "linear") and not self.v > 0:
            raise ValueError("free-flow speed v must be positive")
        if self.kind == "linear":
            if not is_unbounded(self.C):
                raise ValueError("linear outflow has unbounded capacity")
            object.__setattr__(self, "C", None)
        else:
            if is_unbounded(self.C) or not self.C > 0:
                raise ValueError(f"{self.kind} outflow needs a finite positive capacity C")
        if self.kind == "exponential-saturation" and not self.a > 0:
            raise ValueError("exponential shape a must be positive")

    @classmethod
    def saturated_linear(cls, v: float, C: float) -> "OutflowLaw":
        return cls("saturated-linear", v=float(v), C=float(C))

    @classmethod
    def linear(cls, v: float = 1.0) -> "OutflowLaw":
        return cls("linear", v=float(v))

    @classmethod
    def exponential(cls, C: float, a: float) -> "OutflowLaw":
        return cls("exponential-saturation", C=float(C), a=float(a))

    @property
    def capacity(self):
        return UNBOUNDED if self.C is None else self.C

    @property
    def saturates_asymptotically(self) -> bool:
        return self.kind == "exponential-saturation"

    @property
    def critical_density(self) -> float:
        """Density at which capacity is first reached (inf if never)."""
        if self.kind == "saturated-linear":
            return self.C / self.v
        return math.inf


@dataclass(frozen=True)
class TravelCostLaw:
    """Link travel cost ``slope * x + intercept``, plus ``1 / (critical - x)``
    for the barrier kind (cost diverges at the critical density)."""

    kind: str = "affine"
    slope: float = 1.0
    intercept: float = 0.0
    critical: float | None = None

    def __post_init__(self):
        if self.kind not in ("affine", "barrier"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.slope < 0 or self.intercept < 0:
            raise ValueError("cost slope and intercept must be non-negative")
        if self.kind == "barrier":
            if self.critical is None or not (0 < self.critical < math.inf):
                raise ValueError("barrier cost needs a finite positive critical density")
        elif self.critical is not None:
            raise ValueError("affine cost takes no critical density")

    @classmethod
    def affine(cls, slope: float, intercept: float = 0.0) -> "TravelCostLaw":
        return cls("affine", float(slope), float(intercept))

    @classmethod
    def barrier(cls, slope: float, intercept: float, critical: float) -> "TravelCostLaw":
        return cls("barrier", float(slope), float(intercept), float(critical))

    @property
    def bounded(self) -> bool:
        return self.kind == "affine"

    def integral(self, x: float) -> float:
        """Closed-form antiderivative from 0 to ``x``."""
        val = 0.5 * self.slope * x * x + self.intercept * x
        if self.kind == "barrier":
            if x >= self.critical:
                return math.inf
            val += math.log(self.critical / (self.critical - x))
        return val


@dataclass(frozen=True)
class RatePolicy:
    """Reaction rates of the routing dynamics.

    ``constant``: every junction reacts at ``gamma``. ``local``: junction
    ``l`` reacts at ``kappa * min_{m in A_l} pi_m``, floored at ``floor`` so
    the rate stays strictly positive.
    """

    kind: str = "constant"
    gamma: float = 1.0
    kappa: float = 0.01
    floor: float = RATE_FLOOR

    def __post_init__(self):
        if self.kind not in ("constant", "local"):
            raise ValueError(f"unknown rate policy {self.kind!r}")
        if not self.gamma > 0 or not self.kappa > 0 or not self.floor > 0:
            raise ValueError("rates must be strictly positive")

    @classmethod
    def constant(cls, gamma: float = 1.0) -> "RatePolicy":
        return cls("constant", gamma=float(gamma))

    @classmethod
    def local(cls, kappa: float = 0.01, floor: float = RATE_FLOOR) -> "RatePolicy":
        return cls("local", kappa=float(kappa), floor=float(floor))


@dataclass(frozen=True)
class LinkParams:
    outflow: OutflowLaw
    cost: TravelCostLaw
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


_OUT_CODES = {"saturated-linear": K.OUT_SATURATED, "linear": K.OUT_LINEAR, "exponential-saturation": K.OUT_EXPONENTIAL}
_COST_CODES = {"affine": K.COST_AFFINE, "barrier": K.COST_BARRIER}


def compile_model(
    net: TrafficNetwork,
    params: Mapping,
    policy: RatePolicy | None = None,
    inflow: float = 0.0,
) -> K.Model:
    """Pack a network and its link laws into flat arrays for the kernels."""
    missing = [l for l in net.links if l not in params]
    if missing:
        raise KeyError(f"no link parameters for {missing}")
    policy = policy or RatePolicy()
    P = [params[l] for l in net.links]
    ix = net.index
    jlo = np.zeros(net.n_links, dtype=np.int64)
    jhi = np.zeros(net.n_links, dtype=np.int64)
    for k, (l, _) in enumerate(net.ramps):
        i = ix[l]
        if jhi[i] == 0:
            jlo[i] = k
        jhi[i] = k + 1
    return K.Model(
        source=ix[net.source],
        inflow=float(inflow),
        okind=np.array([_OUT_CODES[p.outflow.kind] for p in P], dtype=np.int64),
        ov=np.array([p.outflow.v for p in P], dtype=float),
        oc=np.array([math.inf if p.outflow.C is None else p.outflow.C for p in P], dtype=float),
        oa=np.array([p.outflow.a for p in P], dtype=float),
        ckind=np.array([_COST_CODES[p.cost.kind] for p in P], dtype=np.int64),
        ca=np.array([p.cost.slope for p in P], dtype=float),
        cb=np.array([p.cost.intercept for p in P], dtype=float),
        cbar=np.array([p.cost.critical or math.inf for p in P], dtype=float),
        alpha=np.array([p.alpha for p in P], dtype=float),
        rev_order=np.arange(net.n_links - 1, -1, -1, dtype=np.int64),
        jlo=jlo,
        jhi=jhi,
        ramp_from=np.array([ix[l] for l, _ in net.ramps], dtype=np.int64),
        ramp_to=np.array([ix[m] for _, m in net.ramps], dtype=np.int64),
        pkind=K.RATE_CONSTANT if policy.kind == "constant" else K.RATE_LOCAL,
        gamma=float(policy.gamma),
        kappa=float(policy.kappa),
        floor=float(policy.floor),
    )


def _single_link_model(law: OutflowLaw | None = None, cost: TravelCostLaw | None = None) -> K.Model:
    from .network import build_network

    net = build_network([(0, "o", "d")], 0, 0)
    params = {0: LinkParams(law or OutflowLaw.linear(), cost or TravelCostLaw.affine(1.0))}
    return compile_model(net, params)


def outflow(law: OutflowLaw, x: float) -> float:
    if x < 0:
        raise NegativeDensity(f"density {x} is negative")
    out = np.empty(1)
    K.outflow_all(np.array([float(x)]), _single_link_model(law=law), out)
    return float(out[0])


def travel_cost(law: TravelCostLaw, x: float) -> float:
    if x < 0:
        raise NegativeDensity(f"density {x} is negative")
    if law.kind == "barrier" and x >= law.critical:
        raise BarrierExceeded(f"density {x} reaches critical density {law.critical}")
    out = np.empty(1)
    K.cost_all(np.array([float(x)]), _single_link_model(cost=law), out)
    return float(out[0])


def _as_density(net: TrafficNetwork, x) -> np.ndarray:
    if isinstance(x, Mapping):
        x = [x[l] for l in net.links]
    x = np.asarray(x, dtype=float)
    if x.shape != (net.n_links,):
        raise ValueError(f"expected {net.n_links} densities, got shape {x.shape}")
    if np.any(x < 0):
        raise NegativeDensity("densities must be non-negative")
    return x


def _as_ratios(net: TrafficNetwork, r) -> np.ndarray:
    if isinstance(r, RoutingState):
        if r.ramps != net.ramps:
            raise KeyError("routing state belongs to a different ramp set")
        return np.asarray(r.values, dtype=float)
    if isinstance(r, Mapping):
        return np.asarray(RoutingState.from_mapping(net, r).values, dtype=float)
    r = np.asarray(r, dtype=float)
    if r.shape != (net.n_ramps,):
        raise ValueError(f"expected {net.n_ramps} ratios, got shape {r.shape}")
    return r


@dataclass(frozen=True, eq=False)
class PerceivedCosts:
    """Perceived cost per link, in the network's link order."""

    links: tuple
    values: np.ndarray
    alpha: np.ndarray

    def __getitem__(self, link) -> float:
        return float(self.values[self.links.index(link)])

    def as_dict(self) -> dict:
        return dict(zip(self.links, map(float, self.values)))


def perceived_costs(net: TrafficNetwork, x, params: Mapping) -> PerceivedCosts:
    """Minimum cost to destination, computed by one backward sweep.

    ``pi_l = tau_l + (1 - alpha_l) min_m pi_m`` over the downstream ramps, so
    ``alpha_l = 0`` is the full cost to destination and ``alpha_l = 1`` the
    local cost only. The destination link perceives its own cost.
    Densities past a barrier give infinite entries instead of raising.
    """
    m = compile_model(net, params)
    x = _as_density(net, x)
    tau = np.empty(net.n_links)
    pi = np.empty(net.n_links)
    K.cost_all(x, m, tau)
    K.perceived_from_costs(tau, m, pi)
    pi.setflags(write=False)
    return PerceivedCosts(net.links, pi, m.alpha)


def _as_costs(net: TrafficNetwork, pi) -> np.ndarray:
    if isinstance(pi, PerceivedCosts):
        return np.asarray(pi.values)
    if isinstance(pi, Mapping):
        return np.array([pi[l] for l in net.links], dtype=float)
    return np.asarray(pi, dtype=float)


def appeals(net: TrafficNetwork, r, pi) -> np.ndarray:
    """Appeal of every ramp, ``sum_q r_lq pi_q - pi_m``, in ramp order."""
    r = _as_ratios(net, r)
    pi = _as_costs(net, pi)
    out = np.empty(net.n_ramps)
    for l in net.junctions:
        ks = [net.ramp_index[(l, m)] for m in net.downstream[l]]
        costs = np.array([pi[net.index[m]] for m in net.downstream[l]])
        mean = float(sum(r[k] * c for k, c in zip(ks, costs) if r[k] != 0.0))
        out[ks] = mean - costs
    return out


def appeal(net: TrafficNetwork, r, pi, ramp) -> float:
    if ramp not in net.ramp_index:
        raise NotARamp(f"{ramp!r} is not a ramp of this network")
    return float(appeals(net, r, pi)[net.ramp_index[ramp]])


def traffic_rhs(net: TrafficNetwork, x, r, inflow: float, params: Mapping) -> np.ndarray:
    """Density derivative: routed inflow minus own outflow, plus the exogenous
    inflow on the source link."""
    m = compile_model(net, params, inflow=inflow)
    x = _as_density(net, x)
    r = _as_ratios(net, r)
    f = np.empty(net.n_links)
    dx = np.empty(net.n_links)
    K.outflow_all(x, m, f)
    K.traffic_from_flows(f, r, m, dx)
    return dx


def reaction_rates(net: TrafficNetwork, pi, policy: RatePolicy) -> np.ndarray:
    m = compile_model(net, _dummy_params(net), policy)
    out = np.empty(net.n_links)
    K.rates_all(_as_costs(net, pi), m, out)
    return out


def reaction_rate(policy: RatePolicy, net: TrafficNetwork, pi, link) -> float:
    return float(reaction_rates(net, pi, policy)[net.index[link]])


def routing_rhs(net: TrafficNetwork, r, pi, policy: RatePolicy) -> np.ndarray:
    """Replicator update of the routing ratios, in ramp order.

    Ramps with zero ratio stay at zero. Junctions whose downstream costs are
    all infinite are frozen; a used ramp mixed with an infinite-cost ramp
    yields a non-finite entry.
    """
    m = compile_model(net, _dummy_params(net), policy)
    r = _as_ratios(net, r)
    pi = _as_costs(net, pi)
    gam = np.empty(net.n_links)
    dr = np.empty(net.n_ramps)
    K.rates_all(pi, m, gam)
    K.routing_from_costs(pi, gam, r, m, dr)
    return dr


def _dummy_params(net: TrafficNetwork) -> dict:
    p = LinkParams(OutflowLaw.linear(), TravelCostLaw.affine(1.0))
    return {l: p for l in net.links}
