"""Drive a 1D tumor to the healthy state and compare with the certificate.

Runs the built-in reference scenario: a pilot run calibrates the offset in
the chemical-potential bound, the certificate gives a threshold gain and a
reaching time, and a controlled run at 1.25 times the threshold is checked
against both.

    python demos/eradication.py [output_dir]
"""
import sys

import numpy as np

from phaseslide.harness import builtin_scenario, prepare_certificate, simulate

cfg = builtin_scenario("scenario-1d-eradication")
inputs = prepare_certificate(cfg)
print(f"C_sh (estimated)     = {inputs.C_sh:.4f}")
print(f"C_sys                = {inputs.C_sys:.4f}")
print(f"C_hat from the pilot = {inputs.C_hat:.4g}  (pilot gain {inputs.rho_pilot:.4g})")
print(f"threshold gain rho*  = {inputs.rho_star:.4f}")

rho = 1.25 * inputs.rho_star
out_dir = sys.argv[1] if len(sys.argv) > 1 else None
o = simulate(cfg, out_dir, rho=rho, inputs=inputs)
cert = o.certificate

print(f"\ngain rho = {rho:.4f}, A(rho) = {cert.A_rho:.4f}")
print(f"certified reaching time T* = {cert.T_star:.4f}")
print(f"observed reaching time     = {o.t_num}  (band {o.delta_slide:g})")
print(f"envelope check             = {'pass' if o.envelope.passed else 'FAIL'}")

t = o.series.column("t")
dev = o.series.column("sup_dev")
w = o.series.column("w_bound")
print("\n     t    sup|phi-phi*|   w(t)")
for i in np.linspace(0, len(t) - 1, 11).astype(int):
    print(f"{t[i]:6.3f}   {dev[i]:12.5f}   {w[i]:8.5f}")
