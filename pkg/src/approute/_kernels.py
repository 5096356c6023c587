"""Compiled inner loops shared by the pointwise API and the integrator.

Every model quantity (outflows, costs, perceived costs, rates, right-hand
sides) is evaluated here, so the simulator and the public functions cannot
drift apart. Link arrays are in the network's topological order; ramp arrays
follow the network's ramp order.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np
from numba import njit

OUT_SATURATED, OUT_LINEAR, OUT_EXPONENTIAL = 0, 1, 2
COST_AFFINE, COST_BARRIER = 0, 1
RATE_CONSTANT, RATE_LOCAL = 0, 1

STATUS_OK, STATUS_BLOWUP, STATUS_NONFINITE, STATUS_DEGENERATE = 0, 1, 2, 3

BLOWUP_LIMIT = 1e12
DEGENERATE_SUM = 1e-12

Model = namedtuple(
    "Model",
    [
        "source",  # int, index of the source link
        "inflow",  # float
        "okind", "ov", "oc", "oa",  # outflow law per link
        "ckind", "ca", "cb", "cbar",  # travel cost law per link
        "alpha",  # perceived-cost confidence per link
        "rev_order",  # link indices, reverse topological order
        "jlo", "jhi",  # ramps leaving link i are jlo[i]:jhi[i]
        "ramp_from", "ramp_to",
        "pkind", "gamma", "kappa", "floor",  # reaction-rate policy
    ],
)


@njit(cache=True)
def outflow_all(x, m, out):
    for i in range(x.shape[0]):
        k = m.okind[i]
        if k == OUT_SATURATED:
            out[i] = min(m.ov[i] * x[i], m.oc[i])
        elif k == OUT_LINEAR:
            out[i] = m.ov[i] * x[i]
        else:
            out[i] = m.oc[i] * -np.expm1(-m.oa[i] * x[i])


@njit(cache=True)
def cost_all(x, m, out):
    for i in range(x.shape[0]):
        t = m.ca[i] * x[i] + m.cb[i]
        if m.ckind[i] == COST_BARRIER:
            gap = m.cbar[i] - x[i]
            if gap <= 0.0:
                t = np.inf
            else:
                t += 1.0 / gap
        out[i] = t


@njit(cache=True)
def perceived_from_costs(tau, m, out):
    for i in m.rev_order:
        lo, hi = m.jlo[i], m.jhi[i]
        if lo == hi:
            out[i] = tau[i]
            continue
        best = np.inf
        for k in range(lo, hi):
            v = out[m.ramp_to[k]]
            if v < best:
                best = v
        a = m.alpha[i]
        val = tau[i]
        if a < 1.0:
            val += (1.0 - a) * best
        out[i] = val


@njit(cache=True)
def rates_all(pi, m, out):
    n = pi.shape[0]
    for i in range(n):
        lo, hi = m.jlo[i], m.jhi[i]
        if m.pkind == RATE_CONSTANT:
            out[i] = m.gamma
            continue
        if lo == hi:
            out[i] = m.floor
            continue
        best = np.inf
        for k in range(lo, hi):
            v = pi[m.ramp_to[k]]
            if v < best:
                best = v
        g = m.kappa * best
        if not g > m.floor:
            g = m.floor
        out[i] = g


@njit(cache=True)
def routing_from_costs(pi, gam, r, m, out):
    n = pi.shape[0]
    for i in range(n):
        lo, hi = m.jlo[i], m.jhi[i]
        if lo == hi:
            continue
        all_inf = True
        mean = 0.0
        for k in range(lo, hi):
            p = pi[m.ramp_to[k]]
            if p < np.inf:
                all_inf = False
            if r[k] != 0.0:
                mean += r[k] * p
        if all_inf:
            for k in range(lo, hi):
                out[k] = 0.0
            continue
        g = gam[i]
        for k in range(lo, hi):
            if r[k] == 0.0:
                out[k] = 0.0
            else:
                out[k] = g * r[k] * (mean - pi[m.ramp_to[k]])


@njit(cache=True)
def traffic_from_flows(f, r, m, out):
    for i in range(f.shape[0]):
        out[i] = -f[i]
    out[m.source] += m.inflow
    for k in range(r.shape[0]):
        out[m.ramp_to[k]] += r[k] * f[m.ramp_from[k]]


@njit(cache=True)
def full_rhs(x, r, m, dx, dr, f, tau, pi, gam):
    outflow_all(x, m, f)
    traffic_from_flows(f, r, m, dx)
    cost_all(x, m, tau)
    perceived_from_costs(tau, m, pi)
    rates_all(pi, m, gam)
    routing_from_costs(pi, gam, r, m, dr)


@njit(cache=True)
def renormalize(r, m, stats):
    """Clamp to [0, 1] and rescale each junction row to sum 1, in place.

    ``stats[0]`` receives the largest pre-fix residual, ``stats[1]`` the
    status code.
    """
    n = m.jlo.shape[0]
    worst = 0.0
    for i in range(n):
        lo, hi = m.jlo[i], m.jhi[i]
        if lo == hi:
            continue
        raw = 0.0
        clamp = 0.0
        for k in range(lo, hi):
            v = r[k]
            if not (v >= -0.1 and v <= 1.1):
                stats[1] = STATUS_BLOWUP if v == v else STATUS_NONFINITE
                return
            raw += v
            if v < 0.0:
                clamp = max(clamp, -v)
                r[k] = 0.0
            elif v > 1.0:
                clamp = max(clamp, v - 1.0)
                r[k] = 1.0
        s = 0.0
        for k in range(lo, hi):
            s += r[k]
        if s <= DEGENERATE_SUM:
            stats[1] = STATUS_DEGENERATE
            return
        for k in range(lo, hi):
            r[k] = r[k] / s
        res = max(abs(raw - 1.0), clamp)
        if res > worst:
            worst = res
    stats[0] = worst


@njit(cache=True, nogil=True)
def integrate_fixed(x0, r0, m, dt, n_steps, stride, scheme, out_t, out_x, out_r, out_pi, out_res, out_clamp):
    """Fixed-step integration with per-step simplex repair.

    Returns ``(status, records_written, failing_step)``.
    """
    n = x0.shape[0]
    k = r0.shape[0]
    x = x0.copy()
    r = r0.copy()
    f = np.empty(n)
    tau = np.empty(n)
    pi = np.empty(n)
    gam = np.empty(n)
    k1x = np.empty(n); k2x = np.empty(n); k3x = np.empty(n); k4x = np.empty(n)
    k1r = np.empty(k); k2r = np.empty(k); k3r = np.empty(k); k4r = np.empty(k)
    xs = np.empty(n)
    rs = np.empty(k)
    stats = np.zeros(2)

    full_rhs(x, r, m, k1x, k1r, f, tau, pi, gam)
    out_t[0] = 0.0
    out_x[0] = x
    out_r[0] = r
    out_pi[0] = pi
    out_res[0] = 0.0
    out_clamp[0] = 0.0
    rec = 1
    worst_res = 0.0
    worst_clamp = 0.0
    for step in range(1, n_steps + 1):
        if scheme == 0:
            full_rhs(x, r, m, k1x, k1r, f, tau, pi, gam)
            for i in range(n):
                xs[i] = x[i] + 0.5 * dt * k1x[i]
            for i in range(k):
                rs[i] = r[i] + 0.5 * dt * k1r[i]
            full_rhs(xs, rs, m, k2x, k2r, f, tau, pi, gam)
            for i in range(n):
                xs[i] = x[i] + 0.5 * dt * k2x[i]
            for i in range(k):
                rs[i] = r[i] + 0.5 * dt * k2r[i]
            full_rhs(xs, rs, m, k3x, k3r, f, tau, pi, gam)
            for i in range(n):
                xs[i] = x[i] + dt * k3x[i]
            for i in range(k):
                rs[i] = r[i] + dt * k3r[i]
            full_rhs(xs, rs, m, k4x, k4r, f, tau, pi, gam)
            for i in range(n):
                x[i] += dt / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i])
            for i in range(k):
                r[i] += dt / 6.0 * (k1r[i] + 2.0 * k2r[i] + 2.0 * k3r[i] + k4r[i])
        else:
            full_rhs(x, r, m, k1x, k1r, f, tau, pi, gam)
            for i in range(n):
                x[i] += dt * k1x[i]
            for i in range(k):
                r[i] += dt * k1r[i]

        for i in range(n):
            v = x[i]
            if v != v:
                return STATUS_NONFINITE, rec, step
            if abs(v) > BLOWUP_LIMIT:
                return STATUS_BLOWUP, rec, step
            if v < 0.0:
                if -v > worst_clamp:
                    worst_clamp = -v
                x[i] = 0.0
        stats[0] = 0.0
        stats[1] = STATUS_OK
        renormalize(r, m, stats)
        if stats[1] != STATUS_OK:
            return int(stats[1]), rec, step
        if stats[0] > worst_res:
            worst_res = stats[0]

        if step % stride == 0:
            cost_all(x, m, tau)
            perceived_from_costs(tau, m, pi)
            out_t[rec] = step * dt
            out_x[rec] = x
            out_r[rec] = r
            out_pi[rec] = pi
            out_res[rec] = worst_res
            out_clamp[rec] = worst_clamp
            worst_res = 0.0
            worst_clamp = 0.0
            rec += 1
    return STATUS_OK, rec, n_steps
