"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 solver failure,
3 invariant violation (``verify``).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .. import potentials as pt
from ..dynamics import SolverError
from ..elliptic import LinearSolverError
from .config import BUILTIN_SCENARIOS, ConfigError, builtin_scenario, parse_config
from .verify import run_suite
from .workflow import estimate_csh, prepare_certificate, resolve_rho, simulate, sweep

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_INVARIANT = 3


def _load(args):
    if args.config in BUILTIN_SCENARIOS:
        return builtin_scenario(args.config)
    return parse_config(args.config)


def _float_list(text):
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return f"{v:.6g}"


def cmd_simulate(args, out):
    cfg = _load(args)
    out_dir = Path(args.out if args.out else cfg.path(cfg["output"]["directory"]))
    echo = cfg.to_text()
    print("# configuration (defaults filled in)", file=out)
    out.write(echo)
    print(file=out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.toml").write_text(echo)
    o = simulate(cfg, out_dir)
    print(f"rho = {o.rho:.6g}", file=out)
    print(f"steps = {len(o.series) - 1}", file=out)
    print(f"final sup deviation = {o.series.column('sup_dev')[-1]:.6g}", file=out)
    print(f"delta_slide = {o.delta_slide:.6g}", file=out)
    print(f"t_num = {_fmt(o.t_num)}", file=out)
    print(f"T* = {_fmt(o.T_star)}", file=out)
    if o.envelope is not None:
        print(f"envelope = {'pass' if o.envelope.passed else 'fail'}", file=out)
    print(f"output written to {out_dir}", file=out)
    return EXIT_OK


def cmd_certify(args, out):
    cfg = _load(args)
    rho, inputs = resolve_rho(cfg)
    if inputs is None:
        inputs = prepare_certificate(cfg)
    if rho <= 0:
        raise ConfigError("control.rho", "a certificate needs a positive gain")
    cert = inputs.at(rho)
    out.write(cert.to_text())
    if inputs.rho_pilot is not None:
        print(f"rho_pilot = {inputs.rho_pilot!r}", file=out)
    if not cert.smallness_ok:
        print("warning: smallness condition violated (C_sys >= 1); no reaching time",
              file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args, out):
    cfg = _load(args)
    out_dir = Path(args.out) if args.out else None
    if args.rho is not None:
        points = sweep(cfg, rhos=args.rho, out_dir=out_dir)
    else:
        points = sweep(cfg, factors=args.rho_factors, out_dir=out_dir)
    print("rho,t_num,T_star,passed_envelope", file=out)
    for p in points:
        print(",".join(_fmt(v) for v in (p.rho, p.t_num, p.T_star, p.passed_envelope)),
              file=out)
    return EXIT_OK


def cmd_estimate_csh(args, out):
    cfg = _load(args)
    value, details = estimate_csh(cfg, details=True)
    print(f"C_sh = {value!r}", file=out)
    for family, v in details.items():
        print(f"  {family}: {v!r}", file=out)
    return EXIT_OK


def cmd_verify(args, out):
    results = run_suite(quick=args.quick, report=lambda c: print(c.line(), file=out, flush=True))
    failed = [c for c in results if not c.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=out)
    return EXIT_INVARIANT if failed else EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="phaseslide",
        description="Sliding-mode control of a viscous Cahn-Hilliard tumor model.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True,
                        help="TOML configuration file or a built-in scenario name "
                             f"({', '.join(BUILTIN_SCENARIOS)})")

    sp = sub.add_parser("simulate", help="run one simulation and write its outputs")
    with_config(sp)
    sp.add_argument("--out", help="output directory (default: output.directory)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("certify", help="print the sliding-mode certificate")
    with_config(sp)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("sweep", help="independent runs over several gains")
    with_config(sp)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--rho", type=_float_list, help="comma-separated gains")
    g.add_argument("--rho-factors", type=_float_list,
                   help="comma-separated multiples of the threshold gain")
    sp.add_argument("--out", help="directory for per-gain outputs and sweep_summary.csv")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("estimate-csh", help="estimate the discrete embedding constant")
    with_config(sp)
    sp.set_defaults(func=cmd_estimate_csh)

    sp = sub.add_parser("verify", help="run the invariant suite on the built-in scenarios")
    sp.add_argument("--quick", action="store_true", help="skip the full 1D reference run")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; a bad command line is a configuration error
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, LinearSolverError, pt.ConvergenceError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
