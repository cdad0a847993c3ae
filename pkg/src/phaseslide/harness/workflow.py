"""End-to-end workflows behind the command-line subcommands."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .. import sliding
from ..dynamics import SimulationAborted, run
from ..elliptic import EMBEDDING_FAMILIES, estimate_embedding_constant
from ..series import TimeSeries
from . import io
from .config import ConfigError

__all__ = [
    "CertificateInputs",
    "SimulationOutcome",
    "SweepPoint",
    "estimate_csh",
    "prepare_certificate",
    "resolve_rho",
    "simulate",
    "sweep",
    "sweep_workers",
    "write_sweep_summary",
    "read_sweep_summary",
]

log = logging.getLogger(__name__)

THREADS_ENV = "PHASESLIDE_THREADS"


def estimate_csh(cfg, details=False):
    """Discrete embedding constant of the configured grid."""
    c = cfg["certificate"]
    return estimate_embedding_constant(cfg.grid, EMBEDDING_FAMILIES, n_random=c["csh_random"],
                                       max_freq=c["csh_max_freq"], seed=c["csh_seed"],
                                       details=details)


@dataclass
class CertificateInputs:
    """Everything a certificate needs except the gain."""

    constants: sliding.SlidingConstants
    C_sh: float
    C_sh_source: str
    C_hat: float
    C_hat_source: str
    tau: float
    T: float
    measure: float
    rho_pilot: Optional[float] = None
    pilot: Optional[TimeSeries] = None

    def at(self, rho):
        return sliding.certificate(self.constants, self.C_sh, self.C_hat, self.tau, self.T,
                                   self.measure, rho, self.C_sh_source, self.C_hat_source)

    @property
    def C_sys(self):
        return self.C_sh * 2.0 * self.measure ** (2.0 / 3.0) / self.tau

    @property
    def rho_star(self):
        return self.at(1.0).rho_star


def prepare_certificate(cfg):
    """Constants, ``C_sh`` and ``C_hat``, running the pilot when asked to.

    The default pilot gain is the threshold computed with ``C_hat = 0``,
    the smallest gain for which the data-only part of the certificate works.
    """
    grid = cfg.grid
    phi0, _, phi_star = cfg.fields(grid)
    pot = cfg.potential
    cc = cfg["certificate"]
    try:
        constants = sliding.compute_constants(phi0, phi_star, cfg.mu_gamma(grid), pot, grid,
                                              domain_margin=cfg["solver"]["domain_margin"])
    except ValueError as exc:
        raise ConfigError("phi_star", str(exc)) from None
    if cc["c_sh"] == "estimate":
        C_sh, C_sh_source = estimate_csh(cfg), "estimated"
    else:
        C_sh, C_sh_source = cc["c_sh"], "user-supplied"
    tau, T = cfg["model"]["tau"], cfg["time"]["T"]
    inputs = CertificateInputs(constants, C_sh, C_sh_source, 0.0, "user-supplied", tau, T,
                               grid.measure)
    if cc["c_hat"] != "pilot":
        inputs.C_hat = cc["c_hat"]
        return inputs
    rho_pilot = cc["rho_pilot"]
    if rho_pilot is None:
        rho_pilot = inputs.rho_star
        if rho_pilot is None:
            raise ConfigError("certificate.rho_pilot",
                              f"smallness condition violated (C_sys = {inputs.C_sys:.4g} >= 1); "
                              "no default pilot gain, set rho_pilot explicitly")
    pilot = run(cfg.build_problem(rho_pilot)).series
    inputs.C_hat = sliding.estimate_chat(pilot, inputs.C_sys, rho_pilot)
    inputs.C_hat_source = "empirical-from-pilot"
    inputs.rho_pilot = rho_pilot
    inputs.pilot = pilot
    return inputs


def resolve_rho(cfg, inputs=None):
    """Configured gain: ``control.rho`` or ``rho_factor`` times the threshold."""
    ctl = cfg["control"]
    if ctl["rho"] is not None:
        return ctl["rho"], inputs
    inputs = inputs or prepare_certificate(cfg)
    rs = inputs.rho_star
    if rs is None:
        raise ConfigError("control.rho_factor",
                          "no threshold gain: the smallness condition is violated")
    return ctl["rho_factor"] * rs, inputs


def delta_slide(cfg, M0):
    d = cfg["control"]["delta_slide"]
    return d if d is not None else sliding.default_delta_slide(M0, cfg["control"]["eps"])


@dataclass
class SimulationOutcome:
    rho: float
    series: TimeSeries
    certificate: Optional[sliding.SlidingCertificate]
    delta_slide: float
    t_num: Optional[float]
    envelope: Optional[sliding.EnvelopeReport]
    out_dir: Optional[Path] = None

    @property
    def T_star(self):
        return None if self.certificate is None else self.certificate.T_star

    @property
    def mu_bound_excess(self):
        """``max_t ||mu||_inf - (C_sys rho + C_hat)``; nonpositive when the bound holds."""
        c = self.certificate
        if c is None:
            return None
        return float(np.max(self.series.column("mu_inf"))) - (c.C_sys * self.rho + c.C_hat)


def _snapshot_writer(out_dir, grid, stride, pgm):
    if not stride:
        return None

    def on_step(state):
        if state.step % stride:
            return
        for name, values in (("phi", state.phi), ("sigma", state.sigma), ("mu", state.mu)):
            csv_path, pgm_path = io.snapshot_paths(out_dir, name, state.step)
            io.write_field_csv(grid, values, csv_path)
            if pgm:
                io.write_pgm(values, pgm_path)
    return on_step


def _certificate_or_none(inputs, rho):
    if inputs is None or rho <= 0:
        return None
    return inputs.at(rho)


def simulate(cfg, out_dir=None, rho=None, inputs=None, with_certificate=True):
    """Run one simulation; with ``out_dir`` write series, certificate and snapshots.

    A solver failure writes the partial series before re-raising.
    """
    if rho is None:
        rho, inputs = resolve_rho(cfg, inputs)
    if with_certificate and inputs is None:
        inputs = prepare_certificate(cfg)
    problem = cfg.build_problem(rho)
    cert = _certificate_or_none(inputs, rho)
    on_step = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if cert is not None:
            io.write_certificate(cert, out_dir / "certificate.txt")
        oc = cfg["output"]
        on_step = _snapshot_writer(out_dir, problem.grid, oc["snapshot_stride"], oc["pgm"])
    try:
        series = run(problem, cert, on_step).series
    except SimulationAborted as exc:
        if out_dir is not None:
            io.write_timeseries(exc.series, out_dir / "timeseries.csv")
        raise
    if out_dir is not None:
        io.write_timeseries(series, out_dir / "timeseries.csv")
    M0 = float(series.column("sup_dev")[0])
    dslide = delta_slide(cfg, M0)
    t_num = sliding.detect_reaching(series, dslide)
    env = None
    if cert is not None and cert.T_star is not None:
        env = sliding.verify_envelope(series, cert, cfg["certificate"]["envelope_tol"] * M0)
    return SimulationOutcome(rho, series, cert, dslide, t_num, env, out_dir)


@dataclass(frozen=True)
class SweepPoint:
    rho: float
    t_num: Optional[float]
    T_star: Optional[float]
    passed_envelope: Optional[bool]
    mu_bound_excess: Optional[float]
    series: TimeSeries


def _sweep_one(cfg, rho, inputs, out_dir):
    point_dir = None if out_dir is None else Path(out_dir) / f"rho_{rho:.6g}"
    o = simulate(cfg, point_dir, rho=rho, inputs=inputs)
    passed = None if o.envelope is None else o.envelope.passed
    return SweepPoint(rho, o.t_num, o.T_star, passed, o.mu_bound_excess, o.series)


def sweep_workers(n_points):
    """Worker count: CPU count, capped by ``PHASESLIDE_THREADS`` when set."""
    try:
        cap = len(os.sched_getaffinity(0))
    except AttributeError:
        cap = os.cpu_count() or 1
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cap = min(cap, int(env))
        except ValueError:
            raise ConfigError(THREADS_ENV, f"expected a positive integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError(THREADS_ENV, f"expected a positive integer, got {env!r}")
    return max(1, min(cap, n_points))


def sweep(cfg, rhos=None, factors=None, out_dir=None, workers=None, inputs=None):
    """Independent runs at each gain; returns points sorted by ``rho``.

    Gains come from ``rhos`` or from ``factors`` times the threshold gain.
    The certificate inputs (and the pilot, if any) are computed once.
    """
    if (rhos is None) == (factors is None):
        raise ValueError("give exactly one of rhos or factors")
    inputs = inputs or prepare_certificate(cfg)
    if factors is not None:
        rs = inputs.rho_star
        if rs is None:
            raise ConfigError("certificate", "no threshold gain: smallness condition violated")
        rhos = [f * rs for f in factors]
    rhos = sorted(float(r) for r in rhos)
    if workers is None:
        workers = sweep_workers(len(rhos))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    if workers == 1:
        points = [_sweep_one(cfg, r, inputs, out_dir) for r in rhos]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_one, cfg, r, inputs, out_dir) for r in rhos]
            points = [f.result() for f in futures]
    if out_dir is not None:
        write_sweep_summary(points, Path(out_dir) / "sweep_summary.csv")
    return points


SUMMARY_COLUMNS = ("rho", "t_num", "T_star", "passed_envelope")


def _summary_cell(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return io.format_number(v)


def write_sweep_summary(points, path):
    lines = [",".join(SUMMARY_COLUMNS)]
    for p in sorted(points, key=lambda p: p.rho):
        lines.append(",".join(_summary_cell(v) for v in (p.rho, p.t_num, p.T_star,
                                                         p.passed_envelope)))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def read_sweep_summary(path):
    rows = Path(path).read_text().splitlines()
    if tuple(rows[0].split(",")) != SUMMARY_COLUMNS:
        raise ValueError(f"{path}: unexpected header {rows[0]}")

    def cell(s):
        if s == "none":
            return None
        if s in ("true", "false"):
            return s == "true"
        return float(s)
    return [tuple(cell(s) for s in r.split(",")) for r in rows[1:] if r]
