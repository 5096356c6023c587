"""Seven-link network: unit reaction rates keep circling the Wardrop point,
congestion-aware rates settle on it."""

import numpy as np

from approute import RatePolicy, detect_oscillation, integrate
from approute.builtins import SEVEN_LINK_EQUILIBRIUM, seven_link

x_star, _ = SEVEN_LINK_EQUILIBRIUM

for label, policy in [("constant gamma=1", RatePolicy.constant(1.0)), ("local kappa=1e-3", RatePolicy.local(1e-3))]:
    tr = integrate(seven_link(policy, r12=0.9, t_end=300.0))
    osc = detect_oscillation(tr.x_of(2))
    gap = np.abs(tr.final.x - x_star).max()
    print(f"{label:18s} x_2 {osc.verdict:11s} envelope decay {osc.decay:7.3f}  |x(T) - x*| = {gap:.2e}")

# where the congestion-aware gain stops helping
for kappa in (1e-3, 5e-3, 1e-2):
    tr = integrate(seven_link(RatePolicy.local(kappa), r12=0.9, t_end=500.0))
    print(f"kappa={kappa:g}: final gap {np.abs(tr.final.x - x_star).max():.2e}")
