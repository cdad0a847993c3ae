"""Reaching time against the feedback gain.

Sweeps multiples of the threshold gain on the reference scenario and prints
the observed reaching time next to the certified one, plus the gap in the
chemical-potential bound (negative means the bound holds).
"""
from phaseslide.harness import builtin_scenario, prepare_certificate, sweep

cfg = builtin_scenario()
inputs = prepare_certificate(cfg)
factors = [1.25, 1.5, 2.0, 4.0, 8.0]
points = sweep(cfg, factors=factors, inputs=inputs)

print(f"threshold gain rho* = {inputs.rho_star:.3f}\n")
print(" factor      rho    t_num      T*   envelope  mu bound gap")
for f, p in zip(factors, points):
    print(f"{f:7.2f} {p.rho:8.2f} {p.t_num:8.3f} {p.T_star:7.3f}   "
          f"{'pass' if p.passed_envelope else 'FAIL':>8} {p.mu_bound_excess:12.3f}")
