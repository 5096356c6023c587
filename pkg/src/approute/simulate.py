"""Fixed-step integration of the coupled traffic/routing system."""

from __future__ import annotations

import csv
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .network import RoutingState, TrafficNetwork

__all__ = [
    "BlowUp",
    "NonFiniteState",
    "DegenerateRow",
    "IntegratorConfig",
    "SystemState",
    "Trajectory",
    "integrate",
    "renormalize_routing",
    "batch_integrate",
]


class IntegrationError(ArithmeticError):
    def __init__(self, msg, t=None):
        super().__init__(msg)
        self.t = t


class BlowUp(IntegrationError):
    """State left the plausible range (|x| > 1e12 or ratios far off the simplex)."""


class NonFiniteState(IntegrationError):
    pass


class DegenerateRow(IntegrationError):
    """Every ratio at some junction collapsed to zero."""


_ERRORS = {K.STATUS_BLOWUP: BlowUp, K.STATUS_NONFINITE: NonFiniteState, K.STATUS_DEGENERATE: DegenerateRow}


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    t_end: float = 10.0
    scheme: str = "rk4"
    renorm_tol: float = 1e-9
    record_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= 0:
            raise ValueError("t_end must be non-negative")
        if self.scheme not in ("rk4", "euler"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True, eq=False)
class SystemState:
    x: np.ndarray
    r: RoutingState
    t: float = 0.0

    def flat(self) -> np.ndarray:
        """Densities stacked before ratios."""
        return np.concatenate([self.x, self.r.values])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded run. Arrays are indexed by stamp; link columns follow the
    network's link order and ratio columns its ramp order.

    ``residual[i]`` is the largest pre-renormalization simplex residual over
    the steps since the previous stamp, ``clamp[i]`` the largest density clamp.
    """

    network: TrafficNetwork
    times: np.ndarray
    x: np.ndarray
    r: np.ndarray
    pi: np.ndarray
    residual: np.ndarray
    clamp: np.ndarray
    scenario: object = None
    config: IntegratorConfig | None = None
    storage: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> SystemState:
        return SystemState(self.x[i].copy(), RoutingState(self.network.ramps, self.r[i]), float(self.times[i]))

    @property
    def states(self) -> list:
        return [self.state(i) for i in range(len(self))]

    @property
    def final(self) -> SystemState:
        return self.state(len(self) - 1)

    @property
    def max_residual(self) -> float:
        return float(self.residual.max(initial=0.0))

    def x_of(self, link) -> np.ndarray:
        return self.x[:, self.network.index[link]]

    def r_of(self, ramp) -> np.ndarray:
        return self.r[:, self.network.ramp_index[tuple(ramp)]]

    def pi_of(self, link) -> np.ndarray:
        return self.pi[:, self.network.index[link]]

    def columns(self) -> list:
        net = self.network
        return (
            ["t"]
            + [f"x_{l}" for l in net.links]
            + [f"r_{l}_{m}" for l, m in net.ramps]
            + [f"pi_{l}" for l in net.links]
            + ["V_r", "V_x", "simplex_residual"]
        )

    def storages(self) -> tuple:
        """Routing and traffic storage per stamp relative to the scenario's
        reference point; NaN where undefined."""
        if "V_r" not in self.storage:
            from .passivity import trajectory_storages

            self.storage["V_r"], self.storage["V_x"] = trajectory_storages(self)
        return self.storage["V_r"], self.storage["V_x"]

    def to_csv(self, path) -> None:
        vr, vx = self.storages()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for i in range(len(self)):
                row = [self.times[i], *self.x[i], *self.r[i], *self.pi[i], vr[i], vx[i], self.residual[i]]
                w.writerow([repr(float(v)) for v in row])


def renormalize_routing(net: TrafficNetwork, r) -> tuple:
    """Clamp ratios to [0, 1] and rescale every junction row to sum 1.

    Returns ``(r', residual)``; the residual is the largest pre-fix deviation
    over junctions, ``max(|row sum - 1|, clamp size)``.
    """
    from .dynamics import _as_ratios, _dummy_params, compile_model

    m = compile_model(net, _dummy_params(net))
    vals = np.array(_as_ratios(net, r), dtype=float)
    stats = np.zeros(2)
    K.renormalize(vals, m, stats)
    status = int(stats[1])
    if status != K.STATUS_OK:
        raise _ERRORS[status]("routing ratios cannot be renormalized")
    return RoutingState(net.ramps, vals), float(stats[0])


def integrate(scenario, config: IntegratorConfig | None = None) -> Trajectory:
    """Advance densities and ratios jointly from the scenario's initial state.

    After every step negative densities are clamped to zero and each junction
    row is clamped and renormalized; the sizes of both repairs are recorded.
    Raises BlowUp, NonFiniteState or DegenerateRow with the failing time.
    """
    cfg = config or scenario.integrator
    net = scenario.network
    m = scenario.model()
    n_steps = cfg.n_steps
    stride = int(cfg.record_stride)
    n_rec = n_steps // stride + 1
    out_t = np.empty(n_rec)
    out_x = np.empty((n_rec, net.n_links))
    out_r = np.empty((n_rec, net.n_ramps))
    out_pi = np.empty((n_rec, net.n_links))
    out_res = np.empty(n_rec)
    out_clamp = np.empty(n_rec)
    x0 = np.asarray(scenario.x0, dtype=float)
    r0 = np.asarray(scenario.r0.values, dtype=float)
    status, rec, step = K.integrate_fixed(
        x0, r0, m, float(cfg.dt), n_steps, stride, 0 if cfg.scheme == "rk4" else 1,
        out_t, out_x, out_r, out_pi, out_res, out_clamp,
    )
    if status != K.STATUS_OK:
        t = step * cfg.dt
        raise _ERRORS[status](f"{type(scenario).__name__} {getattr(scenario, 'name', '')!r}: failure at t={t:g}", t)
    arrays = [a[:rec] for a in (out_t, out_x, out_r, out_pi, out_res, out_clamp)]
    for a in arrays:
        a.setflags(write=False)
    return Trajectory(net, *arrays, scenario=scenario, config=cfg)


@dataclass(frozen=True)
class RunFailure:
    """Error captured for one run of a batch."""

    index: int
    error: Exception


def batch_integrate(scenarios: Sequence, config: IntegratorConfig | None = None, workers: int | None = None) -> list:
    """Integrate independent scenarios, possibly concurrently.

    Results keep the input order; a failed run yields a RunFailure in its
    slot instead of aborting the batch.
    """

    def run(item):
        i, sc = item
        try:
            return integrate(sc, config)
        except (ArithmeticError, ValueError) as exc:
            return RunFailure(i, exc)

    items = list(enumerate(scenarios))
    if not items:
        return []
    workers = workers or min(len(items), 4)
    if workers == 1:
        return [run(it) for it in items]
    # the compiled integrator releases the GIL, so threads run in parallel
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(run, items))
