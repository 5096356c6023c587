"""Storage functions, dissipation audits along trajectories, the two-link
constant of motion, oscillation detection and empirical stability probes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

from . import _kernels as K
from .dynamics import BarrierExceeded, appeals, perceived_costs, travel_cost
from .network import RoutingState, as_routing, is_unbounded
from .simulate import IntegratorConfig, RunFailure, batch_integrate

__all__ = [
    "UnboundedCapacity",
    "RegimeViolation",
    "WindowTooShort",
    "StorageSeries",
    "OscillationReport",
    "InvariantReport",
    "StabilityVerdict",
    "routing_storage",
    "traffic_storage",
    "trajectory_storages",
    "passivity_audit",
    "two_link_invariant",
    "invariant_value",
    "trapezoid_error_bound",
    "detect_oscillation",
    "stability_probe",
]


class UnboundedCapacity(ValueError):
    pass


class RegimeViolation(ValueError):
    pass


class WindowTooShort(ValueError):
    pass


# ---------------------------------------------------------------- storages


def _kl_rows(r_star: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Per-ramp terms r* ln(r*/r); 0 where r* = 0, inf where only r = 0."""
    r_star = np.broadcast_to(r_star, r.shape)
    out = np.zeros(r.shape)
    used = r_star > 0
    with np.errstate(divide="ignore"):
        out[used] = r_star[used] * (np.log(r_star[used]) - np.log(r[used]))
    return out


def routing_storage(r, r_star, h: float = 1.0, net=None) -> float:
    """Relative entropy of the ratios from the reference, scaled by 1/h.

    Accepts RoutingStates, ramp mappings (with ``net``) or aligned vectors.
    """
    if net is not None:
        r, r_star = as_routing(net, r).values, as_routing(net, r_star).values
    else:
        r = r.values if isinstance(r, RoutingState) else r
        r_star = r_star.values if isinstance(r_star, RoutingState) else r_star
    return float(_kl_rows(np.asarray(r_star, float), np.asarray(r, float)).sum() / h)


def _capacity_bound(scenario) -> float:
    caps = [scenario.params[l].outflow.C for l in scenario.network.links]
    if any(is_unbounded(c) for c in caps):
        raise UnboundedCapacity("traffic storage needs finite capacity on every link")
    return max(caps)


def _downstream_min(net, pi: np.ndarray) -> np.ndarray:
    """min over downstream links of pi, per link (0 at the destination)."""
    out = np.zeros(pi.shape)
    for l in net.links:
        ds = net.downstream[l]
        if ds:
            out[..., net.index[l]] = np.min(pi[..., [net.index[m] for m in ds]], axis=-1)
    return out


def traffic_storage(scenario, x, h: float | None = None, method: str = "closed", local: bool = False) -> float:
    """(1/h) times the sum over links of the integral of pi_l from 0 to x_l,
    with every other density held at its current value.

    With the other densities frozen, pi_l(s) = tau_l(s) + (1 - alpha_l) M_l
    where M_l is the cheapest downstream perceived cost, so the integral has a
    closed form; ``method="quad"`` integrates the full perceived-cost sweep
    numerically instead. ``local=True`` integrates tau_l alone.
    """
    net, params = scenario.network, scenario.params
    h = _capacity_bound(scenario) if h is None else h
    x = np.asarray(x, dtype=float)
    if method == "closed":
        pi = perceived_costs(net, x, params).values
        M = _downstream_min(net, pi)
        total = 0.0
        for i, l in enumerate(net.links):
            total += params[l].cost.integral(x[i])
            if not local:
                total += (1.0 - params[l].alpha) * M[i] * x[i]
        return total / h
    if method != "quad":
        raise ValueError(f"unknown method {method!r}")
    total = 0.0
    for i, l in enumerate(net.links):
        if x[i] == 0.0:
            continue

        def integrand(s, i=i):
            y = x.copy()
            y[i] = s
            if local:
                return travel_cost(params[l].cost, s)
            return perceived_costs(net, y, params).values[i]

        try:
            val, _ = quad(integrand, 0.0, x[i], epsabs=0.0, epsrel=1e-11, limit=200)
        except BarrierExceeded:
            return math.inf
        total += val
    return total / h


def _routing_arrays(traj):
    """Per stamp: reaction rates (per link) and the running-max bound h."""
    m = traj.scenario.model()
    gam = np.empty_like(traj.pi)
    for i in range(len(traj)):
        K.rates_all(traj.pi[i], m, gam[i])
    has_ramps = np.array([len(traj.network.downstream[l]) > 0 for l in traj.network.links])
    peak = gam[:, has_ramps].max(axis=1) if has_ramps.any() else np.ones(len(traj))
    return gam, np.maximum.accumulate(peak)


def trajectory_storages(traj) -> tuple:
    """V_r and V_x per stamp for CSV export; NaN where undefined."""
    n = len(traj)
    sc = traj.scenario
    vr = np.full(n, np.nan)
    vx = np.full(n, np.nan)
    if sc is None:
        return vr, vx
    if sc.reference is not None:
        _, h = _routing_arrays(traj)
        r_star = np.asarray(sc.reference[1].values)
        vr = _kl_rows(r_star, traj.r).sum(axis=1) / h
    try:
        hx = _capacity_bound(sc)
        vx = np.array([traffic_storage(sc, xi, hx) for xi in traj.x])
    except UnboundedCapacity:
        pass
    return vr, vx


# ------------------------------------------------------------------ audits


def trapezoid_error_bound(times: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid error estimate sum(dt^3 / 12 |s''|), using the
    larger neighbouring second difference on each interval."""
    n = len(times)
    out = np.zeros(n)
    if n < 3:
        return out
    dt = np.diff(times)
    d2 = np.zeros(n)
    d2[1:-1] = np.abs(2 * ((s[2:] - s[1:-1]) / dt[1:] - (s[1:-1] - s[:-2]) / dt[:-1]) / (dt[1:] + dt[:-1]))
    d2[0], d2[-1] = d2[1], d2[-2]
    per = dt ** 3 / 12.0 * np.maximum(d2[:-1], d2[1:])
    out[1:] = np.cumsum(per)
    return out


@dataclass(frozen=True, eq=False)
class StorageSeries:
    """Storage V, cumulative supply and residual ``V(t) - V(0) - supply(t)``.

    The inequality holds when ``residual <= tolerance`` at every stamp; the
    tolerance is ``factor`` times the trapezoid error bound of the supply,
    plus a roundoff floor.
    """

    part: str
    form: str
    times: np.ndarray
    storage: np.ndarray
    supply: np.ndarray
    residual: np.ndarray
    error_bound: np.ndarray
    factor: float = 5.0
    details: dict = field(default_factory=dict)

    @property
    def tolerance(self) -> np.ndarray:
        scale = np.abs(self.storage).max(initial=0.0) + np.abs(self.supply).max(initial=0.0)
        return self.factor * self.error_bound + 1e-12 * (1.0 + scale)

    @property
    def ok(self) -> bool:
        return bool(np.all(self.residual <= self.tolerance))

    @property
    def worst_margin(self) -> float:
        """Largest residual minus tolerance (<= 0 when the audit passes)."""
        return float(np.max(self.residual - self.tolerance))

    # column-style aliases
    @property
    def V(self):
        return self.storage


def _series(part, form, times, V, power, details=None) -> StorageSeries:
    supply = np.concatenate([[0.0], cumulative_trapezoid(power, times)])
    residual = (V - V[0]) - supply
    return StorageSeries(part, form, times, V, supply, residual, trapezoid_error_bound(times, power), details=details or {})


def _routing_audit(traj, form: str) -> StorageSeries:
    sc = traj.scenario
    net = traj.network
    if sc.reference is None:
        raise ValueError("routing audit needs a reference equilibrium")
    r_star = np.asarray(sc.reference[1].values)
    x_star = np.asarray(sc.reference[0])
    gam, h = _routing_arrays(traj)
    V = _kl_rows(r_star, traj.r).sum(axis=1) / h
    frm = np.array([net.index[l] for l, _ in net.ramps])
    to = np.array([net.index[m] for _, m in net.ramps])
    w = gam[:, frm] / h[:, None]  # gamma_l / h per ramp
    pi = traj.pi[:, to]
    if form == "passive":
        # shifted pair: input -(pi - pi*), output r - r*
        pi_star = perceived_costs(net, x_star, sc.params).values[to]
        power = np.sum(w * -(pi - pi_star) * (traj.r - r_star), axis=1)
    elif form == "input-strict":
        if sc.policy.kind != "local":
            raise ValueError("input-strict audit applies to congestion-aware rates")
        # u^T y - u^T phi(u) per junction with phi_m(pi) = kappa pi_m
        phi = sc.policy.kappa * pi
        power = np.sum(traj.r * pi - pi * phi, axis=1)
    else:
        raise ValueError(f"unknown routing form {form!r}")
    return _series("routing", form, traj.times, V, power, {"h": h})


def _traffic_audit(traj, form: str, local: bool) -> StorageSeries:
    sc = traj.scenario
    net = traj.network
    h = _capacity_bound(sc)
    V = np.array([traffic_storage(sc, xi, h, local=local) for xi in traj.x])
    to = np.array([net.index[m] for _, m in net.ramps])
    pi = traj.pi
    power = np.sum(traj.r * pi[:, to], axis=1)
    details = {"h": h}
    if form == "output-strict":
        m = sc.model()
        f = np.empty_like(traj.x)
        for i in range(len(traj)):
            K.outflow_all(traj.x[i], m, f[i])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(pi > 0, f / pi, np.inf)
        rho = ratio.min(axis=0)
        if not np.all(rho > 0):
            raise ValueError("flow lower bound f >= rho pi fails: some rho_l is zero")
        power = power - np.sum(rho * pi ** 2, axis=1) / h
        details["rho"] = rho
    elif form != "passive":
        raise ValueError(f"unknown traffic form {form!r}")
    return _series("traffic", form + ("-local" if local else ""), traj.times, V, power, details)


def passivity_audit(traj, part: str = "routing", form: str = "passive", local: bool = False) -> StorageSeries:
    """Dissipation audit of one subsystem along a recorded trajectory.

    routing, ``passive``: storage (1/h) sum r* ln(r*/r), supply
    sum_l (gamma_l / h) (-(pi - pi*))^T (r - r*) over each junction.
    routing, ``input-strict``: same storage, supply
    sum_l [r^T pi - pi^T phi(pi)] with phi_m = kappa pi_m.
    traffic, ``passive``: frozen-coordinate integral storage with h the largest
    capacity, supply sum over ramps of r_lm pi_m. ``output-strict`` subtracts
    (1/h) sum rho_l pi_l^2 with rho_l the smallest observed f_l / pi_l.
    ``local=True`` uses the tau-only storage for the traffic part.
    """
    if part == "routing":
        return _routing_audit(traj, form)
    if part == "traffic":
        return _traffic_audit(traj, form, local)
    raise ValueError(f"unknown part {part!r}")


# ------------------------------------------------------- constant of motion


@dataclass(frozen=True, eq=False)
class InvariantReport:
    times: np.ndarray
    U: np.ndarray
    drift: float  # max |U - U0| / |U0|, absolute when U0 = 0
    orbits: int = 0  # completed swings of the cost gap


def invariant_value(w, r, inflow: float, gamma: float = 1.0, a: float = 1.0):
    """U for cost gap ``w`` (density units) and split ``r`` onto the first road."""
    w, r = np.asarray(w, dtype=float), np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return 0.5 * w ** 2 - inflow / (gamma * a) * np.log(4.0 * r * (1.0 - r))


def two_link_invariant(traj, inflow: float | None = None) -> InvariantReport:
    """Conserved quantity of two congested parallel roads.

    With w = (pi_3 - pi_2) / a the cost gap in density units,
    U = w^2 / 2 - (inflow / (gamma a)) ln(4 r (1 - r)) is constant while both
    roads discharge at capacity and the feeder passes the inflow through.
    """
    sc = traj.scenario
    net = traj.network
    if len(net.downstream[net.source]) != 2 or sum(len(net.downstream[l]) > 1 for l in net.links) != 1:
        raise ValueError("not a two-road network")
    inflow = sc.inflow if inflow is None else inflow
    l2, l3 = net.downstream[net.source]
    p2, p3 = sc.params[l2], sc.params[l3]
    a = p2.cost.slope
    if p3.cost.slope != a or p2.cost.kind != "affine" or p3.cost.kind != "affine":
        raise ValueError("roads need affine costs with equal slopes")
    if sc.policy.kind != "constant":
        raise ValueError("constant of motion needs a constant reaction rate")
    x2, x3 = traj.x_of(l2), traj.x_of(l3)
    crit2, crit3 = p2.outflow.critical_density, p3.outflow.critical_density
    if p2.outflow.C != p3.outflow.C or not (np.all(x2 >= crit2) and np.all(x3 >= crit3)):
        raise RegimeViolation("both roads must stay at or above capacity with equal capacities")
    r = traj.r_of((net.source, l2))
    w = (x3 - x2) + (p3.cost.intercept - p2.cost.intercept) / a
    U = invariant_value(w, r, inflow, sc.policy.gamma, a)
    dev = np.abs(U - U[0]).max()
    drift = float(dev / abs(U[0]) if U[0] != 0 else dev)
    s = np.sign(w - w.mean())
    crossings = int(np.count_nonzero(s[1:] * s[:-1] < 0))
    return InvariantReport(traj.times, U, drift, crossings // 2)


# ------------------------------------------------------------- oscillation

OSCILLATING, DECAYING, CONSTANT = "oscillating", "decaying", "constant"


@dataclass(frozen=True)
class OscillationReport:
    verdict: str
    n_extrema: int
    decay: float  # 1 - late envelope / early envelope
    amplitude: float

    def __str__(self):
        return self.verdict


def detect_oscillation(series, transient: float = 0.2, min_extrema: int = 10) -> OscillationReport:
    """Classify a sampled signal as oscillating, decaying or constant.

    The first ``transient`` fraction is discarded. Half peak-to-trough swings
    between consecutive extrema form the envelope; ``decay`` compares its mean
    over the last quarter of swings with the first quarter. Sustained when
    decay < 5%, decaying otherwise (>= 50% counts as strongly decaying).
    """
    s = np.asarray(series, dtype=float)
    s = s[int(len(s) * transient):]
    if len(s) < 3:
        raise WindowTooShort("need at least three samples after the transient")
    tv = float(np.abs(np.diff(s)).sum())
    if tv < 1e-6:
        return OscillationReport(CONSTANT, 0, 0.0, 0.0)
    d = np.diff(s)
    keep = d != 0
    idx = np.flatnonzero(keep)
    sd = np.sign(d[keep])
    turns = np.flatnonzero(sd[1:] != sd[:-1])
    ext = idx[turns + 1]  # sample index of each extremum
    n_ext = len(ext)
    if n_ext < min_extrema:
        raise WindowTooShort(f"only {n_ext} extrema after the transient; need {min_extrema}")
    vals = s[ext]
    amps = 0.5 * np.abs(np.diff(vals))
    q = max(1, len(amps) // 4)
    early, late = amps[:q].mean(), amps[-q:].mean()
    decay = float(1.0 - late / early) if early > 0 else 0.0
    verdict = OSCILLATING if decay < 0.05 else DECAYING
    return OscillationReport(verdict, n_ext, decay, float(amps.mean()))


# --------------------------------------------------------------- stability

ASYMPTOTIC, STABLE, UNSTABLE, INCONCLUSIVE = (
    "asymptotically-stable",
    "stable-not-asymptotic",
    "unstable",
    "inconclusive",
)


@dataclass(frozen=True, eq=False)
class StabilityVerdict:
    kind: str
    evidence: dict

    def __str__(self):
        return self.kind


def _distance(traj, x_star, r_star) -> np.ndarray:
    dx = np.abs(traj.x - x_star).max(axis=1)
    dr = np.abs(traj.r - r_star).max(axis=1) if traj.r.shape[1] else np.zeros(len(traj))
    return np.maximum(dx, dr)


def _perturbations(scenario, x_star, r_star: RoutingState, delta, n_random, rng, directed):
    net = scenario.network
    out = []
    for _ in range(n_random):
        u = rng.uniform(-1.0, 1.0, net.n_links)
        u[rng.integers(net.n_links)] = rng.choice([-1.0, 1.0])
        x = np.maximum(x_star + delta * u, 0.0)
        r = np.array(r_star.values, dtype=float)
        for l in net.junctions:
            ks = [net.ramp_index[(l, m)] for m in net.downstream[l]]
            v = rng.uniform(-1.0, 1.0, len(ks))
            v -= v.mean()
            span = np.abs(v).max()
            if span > 0:
                r[ks] = np.clip(r[ks] + delta * v / span, 0.0, 1.0)
                r[ks] /= r[ks].sum()
        out.append(("random", x, r))
    if directed:
        pi = perceived_costs(net, x_star, scenario.params)
        a = appeals(net, r_star, pi)
        for k, (l, m) in enumerate(net.ramps):
            if r_star.values[k] <= 1e-10 and a[k] > 1e-8:
                r = np.array(r_star.values, dtype=float)
                sib = [net.ramp_index[(l, q)] for q in net.downstream[l]]
                donor = max(sib, key=lambda j: r[j])
                eps = min(delta, r[donor])
                r[donor] -= eps
                r[k] += eps
                out.append((f"directed {l}->{m}", x_star.copy(), r))
    return out


def _monotone_growth(d: np.ndarray, samples: int = 20) -> bool:
    half = d[len(d) // 2:]
    if len(half) < samples:
        return False
    pick = half[np.linspace(0, len(half) - 1, samples).astype(int)]
    return bool(np.all(np.diff(pick) >= 0) and pick[-1] > pick[0])


def stability_probe(
    scenario,
    equilibrium=None,
    radii=(1e-3,),
    horizon: float = 100.0,
    n_random: int = 4,
    seed: int = 0,
    directed: bool = True,
    dt: float | None = None,
) -> StabilityVerdict:
    """Empirical stability of an equilibrium from perturbed runs.

    For each radius delta, runs start from random perturbations of size delta
    (densities and zero-sum ratio moves per junction) and, when an unused ramp
    has positive appeal, from a perturbation moving delta of the split onto it.
    Distance is the larger of the sup-norm gaps in densities and in ratios.

    unstable: a run leaves the 100 delta ball, fails numerically, or its
    distance grows monotonically over the last half. asymptotically-stable:
    every final distance <= 0.01 delta. stable-not-asymptotic: runs stay
    within 10 delta, end above 0.1 delta and oscillate. Otherwise inconclusive.
    """
    net = scenario.network
    if equilibrium is None:
        if scenario.reference is None:
            raise ValueError("no equilibrium given and the scenario has no reference point")
        equilibrium = scenario.reference
    if hasattr(equilibrium, "x_star"):
        x_star, r_star = equilibrium.x_star, equilibrium.r_star
    else:
        x_star, r_star = equilibrium
    x_star = np.asarray(x_star, dtype=float)
    r_star = as_routing(net, r_star)
    rng = np.random.default_rng(seed)
    dt = dt or scenario.integrator.dt
    stride = max(1, int(round(horizon / dt / 4000)))
    cfg = IntegratorConfig(dt=dt, t_end=horizon, scheme=scenario.integrator.scheme, record_stride=stride)
    runs = []
    for delta in radii:
        starts = _perturbations(scenario, x_star, r_star, delta, n_random, rng, directed)
        trajs = batch_integrate([scenario.with_state(x, r) for _, x, r in starts], cfg)
        for (label, _, _), tr in zip(starts, trajs):
            rec = {"delta": delta, "start": label}
            if isinstance(tr, RunFailure):
                rec.update(failed=repr(tr.error), max=math.inf, final=math.inf, growing=True, oscillation=None)
            else:
                d = _distance(tr, x_star, r_star.values)
                dev = np.concatenate([tr.x - x_star, tr.r - r_star.values], axis=1)
                col = dev[:, np.argmax(dev.var(axis=0))]
                try:
                    osc = detect_oscillation(col).verdict
                except WindowTooShort:
                    osc = None
                rec.update(max=float(d.max()), final=float(d[-1]), growing=_monotone_growth(d), oscillation=osc)
            runs.append(rec)

    def all_(pred):
        return all(pred(r) for r in runs)

    if not all_(lambda r: r["max"] <= 100 * r["delta"] and not (r["growing"] and r["final"] > r["delta"])):
        kind = UNSTABLE
    elif all_(lambda r: r["final"] <= 0.01 * r["delta"]):
        kind = ASYMPTOTIC
    elif all_(lambda r: r["max"] <= 10 * r["delta"] and r["final"] > 0.1 * r["delta"] and r["oscillation"] == OSCILLATING):
        kind = STABLE
    else:
        kind = INCONCLUSIVE
    return StabilityVerdict(kind, {"radii": list(radii), "horizon": horizon, "runs": runs})
