"""Below the min-cut the network holds a steady state; above it densities
pile up at the bottleneck."""

import numpy as np

from approute import IntegratorConfig, NoEquilibrium, construct_equilibrium, integrate, min_cut_capacity
from approute.builtins import builtin

sc = builtin("two-link-capacitated")
print("min-cut:", min_cut_capacity(sc.network, sc.capacities))

for inflow in (1.5, 1.9, 2.0, 2.1, 2.5):
    try:
        eq = construct_equilibrium(sc, inflow)
        note = f"equilibrium x* = {np.round(eq.x_star, 3).tolist()}"
    except NoEquilibrium:
        note = "no equilibrium"
    tr = integrate(sc.replace(inflow=inflow), IntegratorConfig(dt=1e-3, t_end=100.0, record_stride=100))
    late = tr.times >= 50
    slope = np.polyfit(tr.times[late], tr.x.max(axis=1)[late], 1)[0]
    print(f"inflow {inflow:.1f}: {note}; max density slope {slope:+.4f}")
