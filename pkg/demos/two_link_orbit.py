"""Two congested parallel roads: the split and the density gap trace a closed
orbit, and the conserved quantity stays flat."""

from approute import IntegratorConfig, integrate, two_link_invariant
from approute.builtins import builtin

sc = builtin("two-link-congested")
tr = integrate(sc)
rep = two_link_invariant(tr)
print(f"{rep.orbits} orbits, U0 = {rep.U[0]:.6f}, relative drift {rep.drift:.2e}")

for dt in (1e-2, 5e-3, 2.5e-3):
    d = two_link_invariant(integrate(sc, IntegratorConfig(dt=dt, t_end=30.0))).drift
    print(f"dt={dt:<7g} drift {d:.2e}")

z = tr.x_of(3) - tr.x_of(2)
r = tr.r_of((1, 2))
for i in range(0, len(tr), len(tr) // 12):
    print(f"t={tr.times[i]:6.2f}  z={z[i]:+.4f}  r12={r[i]:.4f}")
