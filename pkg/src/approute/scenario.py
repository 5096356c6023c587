"""Scenario definition and its JSON file format.

A scenario bundles a network, per-link laws, the inflow, an initial state, a
rate policy and integrator settings, plus an optional reference point (a
known equilibrium) used by storage functions and stability probes.

File layout::

    {
      "name": "...",
      "source": 1, "destination": 4, "inflow": 2.0,
      "links": [{"id": 1, "tail": "o", "head": "a",
                 "outflow": {"kind": "saturated-linear", "v": 1, "C": 4},
                 "cost": {"kind": "affine", "slope": 1, "intercept": 0},
                 "alpha": 0}, ...],
      "initial": {"x": {"1": 2.0, ...}, "r": {"1->2": 0.9, "1->3": 0.1}},
      "rates": {"kind": "constant", "gamma": 1.0},
      "integrator": {"dt": 0.001, "t_end": 50, "scheme": "rk4", "record_stride": 10},
      "reference": {"x": {...}, "r": {...}}
    }

Everything except ``links``, ``source``, ``destination`` and ``inflow`` is
optional; missing densities default to 0 and missing junction rows to a
uniform split.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import LinkParams, OutflowLaw, RatePolicy, TravelCostLaw, compile_model
from .network import NetworkError, RoutingState, TrafficNetwork, build_network, check_feasible_routing
from .simulate import IntegratorConfig

__all__ = [
    "ParseError",
    "ValidationError",
    "Scenario",
    "load_scenario",
    "save_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
]


class ParseError(ValueError):
    def __init__(self, msg, line=None, column=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}" + (f", column {column}" if column is not None else ""))
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{msg} ({'; '.join(where)})" if where else msg)
        self.line, self.column, self.field = line, column, field


class ValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    network: TrafficNetwork
    params: Mapping
    inflow: float
    x0: np.ndarray
    r0: RoutingState
    policy: RatePolicy = field(default_factory=RatePolicy)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    reference: tuple | None = None
    description: str = ""

    def model(self):
        return compile_model(self.network, self.params, self.policy, self.inflow)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_state(self, x0=None, r0=None) -> "Scenario":
        x = self.x0 if x0 is None else np.asarray(x0, dtype=float)
        r = self.r0 if r0 is None else _routing(self.network, r0)
        return self.replace(x0=x, r0=r)

    @property
    def capacities(self) -> dict:
        return {l: self.params[l].outflow.capacity for l in self.network.links}

    @property
    def costs_bounded(self) -> bool:
        return all(self.params[l].cost.bounded for l in self.network.links)

    @property
    def reference_state(self):
        """Reference point as ``(x, RoutingState)`` or None."""
        return self.reference

    def digest(self) -> str:
        return scenario_digest(self)


def _routing(net, r) -> RoutingState:
    if isinstance(r, RoutingState):
        return r
    if isinstance(r, Mapping):
        return RoutingState.from_mapping(net, r)
    return RoutingState(net.ramps, r)


def _num(v) -> float | None:
    if v is None:
        return None
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError(f"expected a number, got {v!r}")
    return float(v)


def _lookup(ids: dict, key, where: str):
    k = str(key)
    if k not in ids:
        raise KeyError(f"{where}: unknown link {key!r}")
    return ids[k]


def _ramp_key(ids: dict, key: str, where: str):
    if not isinstance(key, str) or "->" not in key:
        raise KeyError(f"{where}: ramp key {key!r} must look like 'l->m'")
    l, m = key.split("->", 1)
    return _lookup(ids, l.strip(), where), _lookup(ids, m.strip(), where)


def _parse_state(net, ids, block, where, errors):
    x = np.zeros(net.n_links)
    ratios = {}
    xs = block.get("x", {})
    if isinstance(xs, list):
        if len(xs) != net.n_links:
            errors.append(f"{where}.x: expected {net.n_links} values, got {len(xs)}")
        else:
            x = np.array([_num(v) for v in xs])
    elif isinstance(xs, Mapping):
        for k, v in xs.items():
            try:
                x[net.index[_lookup(ids, k, f"{where}.x")]] = _num(v)
            except (KeyError, TypeError) as exc:
                errors.append(f"{where}.x.{k}: {exc}")
    else:
        errors.append(f"{where}.x: expected a list or an object")
    if np.any(x < 0):
        errors.append(f"{where}.x: densities must be non-negative")
    for k, v in (block.get("r") or {}).items():
        try:
            ratios[_ramp_key(ids, k, f"{where}.r")] = _num(v)
        except (KeyError, TypeError) as exc:
            errors.append(f"{where}.r.{k}: {exc}")
    try:
        r = RoutingState.from_mapping(net, ratios)
    except (KeyError, ValueError) as exc:
        errors.append(f"{where}.r: {exc}")
        return x, None
    ok, res = check_feasible_routing(net, dict(r.items()))
    if not ok:
        bad = [l for l, v in res.items() if v > 1e-9]
        for l in bad:
            total = sum(r[(l, m)] for m in net.downstream[l])
            errors.append(f"{where}.r: junction {l} ratios sum to {total:g} (must be 1, each in [0, 1])")
        if not bad:
            errors.append(f"{where}.r: ratios must lie in [0, 1]")
    return x, r


def scenario_from_dict(d: Mapping, name: str = "scenario") -> Scenario:
    """Build and validate a scenario; every violation is reported at once."""
    errors = []
    if not isinstance(d, Mapping):
        raise ValidationError(["top level must be an object"])
    for key in ("links", "source", "destination", "inflow"):
        if key not in d:
            errors.append(f"{key}: missing")
    if errors:
        raise ValidationError(errors)

    params = {}
    specs = []
    ids = {}
    for i, ld in enumerate(d["links"]):
        where = f"links[{i}]"
        try:
            lid = ld["id"]
            ids[str(lid)] = lid
            specs.append((lid, ld["tail"], ld["head"]))
        except (KeyError, TypeError) as exc:
            errors.append(f"{where}: missing {exc}")
            continue
        try:
            o = ld.get("outflow", {"kind": "linear"})
            out = OutflowLaw(o.get("kind", "linear"), v=_num(o.get("v", 1.0)), C=_num(o.get("C")), a=_num(o.get("a", 1.0)))
        except (TypeError, ValueError, AttributeError) as exc:
            errors.append(f"{where}.outflow: {exc}")
            out = None
        try:
            c = ld.get("cost", {})
            cost = TravelCostLaw(
                c.get("kind", "affine"), _num(c.get("slope", 1.0)), _num(c.get("intercept", 0.0)), _num(c.get("critical"))
            )
        except (TypeError, ValueError, AttributeError) as exc:
            errors.append(f"{where}.cost: {exc}")
            cost = None
        try:
            alpha = _num(ld.get("alpha", 0.0))
            if out and cost:
                params[lid] = LinkParams(out, cost, alpha)
        except (TypeError, ValueError) as exc:
            errors.append(f"{where}.alpha: {exc}")

    try:
        inflow = _num(d["inflow"])
        if not inflow >= 0:
            errors.append("inflow: must be non-negative")
    except TypeError as exc:
        errors.append(f"inflow: {exc}")
        inflow = 0.0

    try:
        net = build_network(specs, _lookup(ids, d["source"], "source"), _lookup(ids, d["destination"], "destination"))
    except (NetworkError, KeyError) as exc:
        errors.append(f"network: {exc}")
        raise ValidationError(errors) from None

    x0, r0 = _parse_state(net, ids, d.get("initial") or {}, "initial", errors)
    reference = None
    if d.get("reference") is not None:
        xr, rr = _parse_state(net, ids, d["reference"], "reference", errors)
        reference = (xr, rr)

    try:
        rb = d.get("rates") or {}
        kind = rb.get("kind", "constant")
        policy = RatePolicy(
            kind,
            gamma=_num(rb.get("gamma", 1.0)),
            kappa=_num(rb.get("kappa", 0.01)),
            floor=_num(rb.get("floor", 1e-9)),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        errors.append(f"rates: {exc}")
        policy = None

    try:
        ib = dict(d.get("integrator") or {})
        unknown = set(ib) - {f.name for f in dataclasses.fields(IntegratorConfig)}
        if unknown:
            raise ValueError(f"unknown keys {sorted(unknown)}")
        integ = IntegratorConfig(**ib)
    except (TypeError, ValueError) as exc:
        errors.append(f"integrator: {exc}")
        integ = None

    if errors:
        raise ValidationError(errors)
    return Scenario(
        name=str(d.get("name", name)),
        network=net,
        params=params,
        inflow=inflow,
        x0=x0,
        r0=r0,
        policy=policy,
        integrator=integ,
        reference=reference,
        description=str(d.get("description", "")),
    )


def _enc(v: float):
    return "inf" if v == math.inf else v


def _state_dict(net, x, r) -> dict:
    return {
        "x": {str(l): float(x[i]) for i, l in enumerate(net.links)},
        "r": {f"{l}->{m}": float(r[(l, m)]) for l, m in net.ramps},
    }


def scenario_to_dict(sc: Scenario) -> dict:
    net = sc.network
    links = []
    for l, t, h in net.link_specs():
        p = sc.params[l]
        o = {"kind": p.outflow.kind, "v": p.outflow.v}
        if p.outflow.C is not None:
            o["C"] = _enc(p.outflow.C)
        if p.outflow.kind == "exponential-saturation":
            o["a"] = p.outflow.a
        c = {"kind": p.cost.kind, "slope": p.cost.slope, "intercept": p.cost.intercept}
        if p.cost.critical is not None:
            c["critical"] = p.cost.critical
        links.append({"id": l, "tail": t, "head": h, "outflow": o, "cost": c, "alpha": p.alpha})
    pol = sc.policy
    rates = {"kind": pol.kind}
    if pol.kind == "constant":
        rates["gamma"] = pol.gamma
    else:
        rates.update(kappa=pol.kappa, floor=pol.floor)
    out = {
        "name": sc.name,
        "source": net.source,
        "destination": net.destination,
        "inflow": sc.inflow,
        "links": links,
        "initial": _state_dict(net, sc.x0, sc.r0),
        "rates": rates,
        "integrator": dataclasses.asdict(sc.integrator),
    }
    if sc.description:
        out["description"] = sc.description
    if sc.reference is not None:
        out["reference"] = _state_dict(net, *sc.reference)
    return out


def scenario_digest(sc: Scenario) -> str:
    canon = json.dumps(scenario_to_dict(sc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")


def load_scenario(path) -> Scenario:
    path = Path(path)
    text = path.read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from None
    return scenario_from_dict(d, name=path.stem)
