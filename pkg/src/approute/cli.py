"""Command-line workflows: simulate, analyze, probe, compare, list-builtins.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 analysis
precondition not met.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .builtins import BUILTINS, builtin
from .equilibrium import (
    InversionFailure,
    NoEquilibrium,
    classify_fixed_point,
    construct_equilibrium,
    equilibrium_exists,
    wardrop_check,
)
from .network import min_cut_capacity
from .passivity import (
    RegimeViolation,
    UnboundedCapacity,
    WindowTooShort,
    detect_oscillation,
    passivity_audit,
    stability_probe,
    two_link_invariant,
)
from .scenario import ParseError, ValidationError, load_scenario
from .simulate import IntegrationError, IntegratorConfig, integrate

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_PRECONDITION = 0, 2, 3, 4


class NoOverlap(ValueError):
    pass


class ColumnMissing(KeyError):
    pass


PRECONDITION_ERRORS = (
    NoEquilibrium,
    InversionFailure,
    UnboundedCapacity,
    RegimeViolation,
    WindowTooShort,
    NoOverlap,
    ColumnMissing,
)


# ----------------------------------------------------------------- compare


@dataclass(frozen=True, eq=False)
class Comparison:
    times: np.ndarray
    columns: list  # (simulated name, observed name)
    simulated: np.ndarray  # aligned, one column per pair
    observed: np.ndarray
    rmse: dict
    max_error: dict


def _read_csv(path) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    return header, data.reshape(-1, len(header))


def compare_csv(simulated, observed, column_map: dict | None = None) -> Comparison:
    """Interpolate simulated columns onto the observed time stamps inside the
    common time range and report RMSE and max absolute error per column."""
    sh, sd = _read_csv(simulated)
    oh, od = _read_csv(observed)
    st, ot = sh[0], oh[0]
    if column_map is None:
        column_map = {c: c for c in oh[1:] if c in sh}
    for s, o in column_map.items():
        if s not in sh:
            raise ColumnMissing(f"simulated file has no column {s!r}")
        if o not in oh:
            raise ColumnMissing(f"observed file has no column {o!r}")
    if not column_map:
        raise ColumnMissing("no common columns to compare")
    tsim, tobs = sd[:, sh.index(st)], od[:, oh.index(ot)]
    lo, hi = max(tsim.min(), tobs.min()), min(tsim.max(), tobs.max())
    keep = (tobs >= lo) & (tobs <= hi)
    if len(tsim) == 0 or len(tobs) == 0 or lo > hi or not keep.any():
        raise NoOverlap("time ranges of the two files do not overlap")
    t = tobs[keep]
    pairs = list(column_map.items())
    sim = np.column_stack([np.interp(t, tsim, sd[:, sh.index(s)]) for s, _ in pairs])
    obs = np.column_stack([od[keep, oh.index(o)] for _, o in pairs])
    err = sim - obs
    rmse = {o: float(np.sqrt(np.mean(err[:, j] ** 2))) for j, (_, o) in enumerate(pairs)}
    mx = {o: float(np.max(np.abs(err[:, j]))) for j, (_, o) in enumerate(pairs)}
    return Comparison(t, pairs, sim, obs, rmse, mx)


def write_aligned(cmp: Comparison, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"{o}_sim" for _, o in cmp.columns] + [f"{o}_obs" for _, o in cmp.columns])
        for i, t in enumerate(cmp.times):
            w.writerow([repr(float(v)) for v in (t, *cmp.simulated[i], *cmp.observed[i])])


# ------------------------------------------------------------------ report


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "inf" if v == math.inf else repr(float(v))
    if isinstance(v, np.ndarray):
        return "[" + ", ".join(_fmt(x) for x in v.tolist()) + "]"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def emit(out, key: str, value) -> None:
    if isinstance(value, dict):
        out.write(f"{key}:\n")
        for k, v in value.items():
            out.write(f"  {k}: {_fmt(v)}\n")
    else:
        out.write(f"{key}: {_fmt(value)}\n")


# ---------------------------------------------------------------- commands


def _scenario(args):
    if args.builtin:
        return builtin(args.builtin)
    return load_scenario(args.scenario)


def _overrides(sc, args):
    cfg = sc.integrator
    changes = {}
    if getattr(args, "dt", None):
        changes["dt"] = args.dt
    if getattr(args, "t_end", None) is not None:
        changes["t_end"] = args.t_end
    if changes:
        fields = dict(dt=cfg.dt, t_end=cfg.t_end, scheme=cfg.scheme, renorm_tol=cfg.renorm_tol, record_stride=cfg.record_stride)
        fields.update(changes)
        sc = sc.replace(integrator=IntegratorConfig(**fields))
    return sc


def _ref_distance(traj, sc):
    if sc.reference is None:
        return None
    x_star, r_star = sc.reference
    return float(max(np.abs(traj.final.x - x_star).max(), np.abs(traj.final.r.values - r_star.values).max(initial=0.0)))


def cmd_simulate(args, out) -> int:
    sc = _overrides(_scenario(args), args)
    t0 = time.perf_counter()
    traj = integrate(sc)
    elapsed = time.perf_counter() - t0
    path = Path(args.output or f"{sc.name}.csv")
    traj.to_csv(path)
    net = sc.network
    emit(out, "scenario", sc.name)
    emit(out, "digest", sc.digest())
    emit(out, "trajectory", str(path))
    emit(out, "stamps", len(traj))
    emit(out, "wall_clock_s", round(elapsed, 4))
    emit(out, "max_simplex_residual", traj.max_residual)
    emit(out, "max_density_clamp", float(traj.clamp.max(initial=0.0)))
    emit(out, "final_x", traj.final.x)
    dist = _ref_distance(traj, sc)
    if dist is not None:
        emit(out, "final_distance_to_reference", dist)
    branch = next((l for l in net.links if len(net.downstream[l]) > 1), None)
    if branch is not None:
        watch = net.downstream[branch][0]
        try:
            osc = detect_oscillation(traj.x_of(watch))
            emit(out, f"oscillation_x_{watch}", {"verdict": osc.verdict, "extrema": osc.n_extrema, "decay": osc.decay})
        except WindowTooShort as exc:
            emit(out, f"oscillation_x_{watch}", {"verdict": "too-few-extrema", "note": str(exc)})
    if dist is not None:
        emit(out, "convergence", "asymptotically-stable" if dist <= 1e-3 else "not-converged")
    try:
        inv = two_link_invariant(traj)
        emit(out, "invariant", {"U0": float(inv.U[0]), "relative_drift": inv.drift, "orbits": inv.orbits})
    except (RegimeViolation, ValueError):
        pass
    audits = {}
    if sc.reference is not None:
        a = passivity_audit(traj, "routing")
        audits["routing_passive"] = a.ok
        audits["routing_max_residual"] = float(a.residual.max())
        if sc.policy.kind == "local":
            a = passivity_audit(traj, "routing", "input-strict")
            audits["routing_input_strict"] = a.ok
    try:
        a = passivity_audit(traj, "traffic")
        audits["traffic_passive"] = a.ok
        audits["traffic_max_residual"] = float(a.residual.max())
    except UnboundedCapacity:
        audits["traffic_passive"] = "n/a (unbounded capacity)"
    if audits:
        emit(out, "passivity", audits)
    return EXIT_OK


def _inflow(sc, text):
    if text is None:
        return sc.inflow
    text = text.strip()
    if text.endswith("C"):
        finite = [sc.params[l].outflow.C for l in sc.network.links if sc.params[l].outflow.C is not None]
        if not finite:
            raise ValueError("inflow in units of C needs a link with finite capacity")
        return float(text[:-1] or 1.0) * min(finite)
    return float(text)


def _state(sc, which, inflow):
    if which == "golden":
        if sc.reference is None:
            raise NoEquilibrium("scenario has no reference state")
        return sc.reference
    if which == "initial":
        return sc.x0, sc.r0
    eq = construct_equilibrium(sc, inflow)
    return eq.x_star, eq.r_star


def cmd_analyze(args, out) -> int:
    sc = _scenario(args)
    net = sc.network
    inflow = _inflow(sc, args.inflow)
    emit(out, "scenario", sc.name)
    emit(out, "inflow", inflow)
    what = args.what
    if what == "mincut":
        emit(out, "mincut", float(min_cut_capacity(net, sc.capacities)))
    elif what == "exists":
        emit(out, "mincut", float(min_cut_capacity(net, sc.capacities)))
        emit(out, "exists", equilibrium_exists(net, sc.capacities, inflow, sc.costs_bounded))
    elif what == "equilibrium":
        eq = construct_equilibrium(sc, inflow)
        emit(out, "x_star", eq.x_star)
        emit(out, "r_star", {f"{l}->{m}": v for (l, m), v in eq.r_star.items()})
        emit(out, "flows", eq.flows)
        emit(out, "classification", eq.classification)
        emit(out, "traffic_residual", eq.appeal_report.traffic_residual)
    elif what in ("wardrop", "classify"):
        x, r = _state(sc, args.state_from or ("golden" if sc.reference is not None else "constructed"), inflow)
        cls = classify_fixed_point(sc, x, r, inflow)
        emit(out, "classification", cls.kind)
        emit(out, "appeals", {f"{l}->{m}": v for (l, m), v in cls.appeals.items()})
        if what == "wardrop":
            rep = wardrop_check(sc, x, r, inflow)
            emit(out, "wardrop", rep.wardrop)
            emit(out, "paths", ["-".join(map(str, p)) for p in rep.paths])
            emit(out, "path_costs", rep.path_costs)
            emit(out, "path_flows", rep.path_flows)
            if rep.witness:
                emit(out, "witness", ["-".join(map(str, p)) for p in rep.witness])
    return EXIT_OK


def cmd_probe(args, out) -> int:
    sc = _overrides(_scenario(args), args)
    v = stability_probe(
        sc, radii=tuple(args.radii), horizon=args.horizon, n_random=args.n_random, seed=args.seed, dt=args.dt
    )
    emit(out, "scenario", sc.name)
    emit(out, "verdict", v.kind)
    emit(out, "radii", list(v.evidence["radii"]))
    emit(out, "horizon", v.evidence["horizon"])
    for i, run in enumerate(v.evidence["runs"]):
        emit(out, f"run_{i}", run)
    return EXIT_OK


def cmd_compare(args, out) -> int:
    cmap = None
    if args.columns:
        cmap = {}
        for item in args.columns.split(","):
            s, _, o = item.partition(":")
            cmap[s.strip()] = (o or s).strip()
    cmp = compare_csv(args.simulated, args.observed, cmap)
    emit(out, "stamps", len(cmp.times))
    emit(out, "rmse", cmp.rmse)
    emit(out, "max_error", cmp.max_error)
    if args.output:
        write_aligned(cmp, args.output)
        emit(out, "aligned", args.output)
    return EXIT_OK


def cmd_list(args, out) -> int:
    for name in BUILTINS:
        out.write(f"{name}: {builtin(name).description}\n")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_source(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", metavar="PATH", help="scenario JSON file")
    g.add_argument("--builtin", metavar="NAME", choices=list(BUILTINS), help="built-in scenario")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="approute", description="Traffic and route-choice dynamics on flow networks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="integrate a scenario and write its trajectory")
    _add_source(s)
    s.add_argument("--dt", type=float)
    s.add_argument("--t-end", type=float)
    s.add_argument("--output", metavar="PATH", help="trajectory CSV (default: <name>.csv)")
    s.add_argument("--seed", type=int, default=0, help="perturbation seed (runs themselves are deterministic)")
    s.add_argument("--format", choices=["csv"], default="csv")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="min-cut, existence, equilibrium, Wardrop and classification")
    _add_source(a)
    a.add_argument("what", choices=["mincut", "exists", "equilibrium", "wardrop", "classify"])
    a.add_argument("--inflow", help="number, or a multiple of the smallest capacity like 1.5C")
    a.add_argument("--state-from", choices=["golden", "initial", "constructed"])
    a.set_defaults(func=cmd_analyze)

    pr = sub.add_parser("probe", help="empirical stability of the reference equilibrium")
    _add_source(pr)
    pr.add_argument("--radii", type=float, nargs="+", default=[1e-3])
    pr.add_argument("--horizon", type=float, default=100.0)
    pr.add_argument("--n-random", type=int, default=4)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--dt", type=float)
    pr.set_defaults(func=cmd_probe, t_end=None)

    c = sub.add_parser("compare", help="RMSE of a trajectory against observations")
    c.add_argument("simulated")
    c.add_argument("observed")
    c.add_argument("--columns", help="sim:obs pairs, comma separated (default: shared names)")
    c.add_argument("--output", metavar="PATH", help="aligned series CSV")
    c.add_argument("--format", choices=["csv"], default="csv")
    c.set_defaults(func=cmd_compare)

    ls = sub.add_parser("list-builtins", help="names of the built-in scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except IntegrationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PRECONDITION_ERRORS as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
