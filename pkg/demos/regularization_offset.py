"""Where the regularized controller actually settles.

The feedback rho * sign_eps(phi - phi*) is linear inside |phi - phi*| < eps.
At the target the smooth part of the potential still pulls with pi(phi*), so
the state rests where rho * r / eps balances it:

    r = eps * |pi(phi*)| / rho.

This script compares that estimate with the final deviation of short runs
for several eps and gains.  The default reaching band max(1e-3 M0, eps)
is chosen to sit above this offset.
"""
from phaseslide import potentials as pt
from phaseslide.dynamics import run
from phaseslide.harness import builtin_scenario

cfg = builtin_scenario().with_changes(time={"T": 0.5, "dt": 1e-3})
pot = cfg.potential
phi_star = cfg["phi_star"]["value"]
pull = abs(float(pt.pi_smooth(pot, phi_star)))

print("   eps     rho   final dev   eps*|pi|/rho")
for eps in (0.1, 0.05, 0.025):
    for rho in (40.0, 80.0):
        c = cfg.with_changes(control={"eps": eps})
        dev = run(c.build_problem(rho)).series.column("sup_dev")[-1]
        print(f"{eps:6.3f} {rho:7.1f} {dev:11.5f} {eps * pull / rho:14.5f}")
