"""Executable invariant suite run by the ``verify`` subcommand.

Each check returns a :class:`Check`; :func:`run_suite` runs them all on the
built-in scenarios.
"""
from __future__ import annotations

import io as _io
import time
from dataclasses import dataclass

import numpy as np

from .. import potentials as pt
from .. import sliding
from ..core import build_grid, l2_norm
from ..dynamics import Stage, jacobian_apply, mu_second_route, residual_phi, run, start
from ..elliptic import dirichlet_solve_array, harmonic_extension, hminus1_norm
from . import io
from .config import builtin_scenario
from .workflow import prepare_certificate, simulate

__all__ = [
    "Check",
    "check_regularization",
    "check_elliptic",
    "check_jacobian",
    "check_scenario_run",
    "check_energy_decrease",
    "check_determinism",
    "check_certificate_algebra",
    "check_comparison_closed_form",
    "integrate_comparison_inclusion",
    "run_suite",
]


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f} s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        c = fn(*args, **kwargs)
        c.seconds = time.perf_counter() - t0
        return c
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def random_regularization_samples(n, seed=0):
    """``(kind, eps, r)`` triples mixing bulk values, values near +-1 and tiny values."""
    rng = np.random.default_rng(seed)
    kinds = rng.choice(pt.KINDS, size=n)
    eps = 10.0 ** rng.uniform(-4, 0, size=n)
    mode = rng.integers(0, 3, size=n)
    r = np.where(mode == 0, rng.uniform(-3, 3, size=n),
                 np.where(mode == 1, np.sign(rng.uniform(-1, 1, size=n))
                          * (1 - 10.0 ** rng.uniform(-12, 0, size=n)),
                          rng.normal(scale=1e-3, size=n)))
    return kinds, eps, r


@_timed
def check_regularization(n=10_000, seed=0):
    """Exact inequalities for the Huber function, the Yosida map and the Moreau envelope."""
    kinds, eps, r = random_regularization_samples(n, seed)
    bad = []
    for kind in pt.KINDS:
        m = kinds == kind
        pot = pt.PotentialSpec(kind, 2.0 if kind == "logarithmic" else 1.0)
        e, x = eps[m], r[m]
        a = np.asarray(pt.abs_eps(e, x))
        for i in np.flatnonzero(~((a >= 0) & (a <= np.abs(x)))):
            bad.append(("abs_eps", kind, e[i], x[i]))
        # outside D(beta) the minimal section is +inf and the bound is void
        if kind == "regular":
            inside = np.ones(x.shape, dtype=bool)
        else:
            inside = np.abs(x) <= 1.0 if pot.domain_closed else np.abs(x) < 1.0
        b = np.asarray(pt.yosida_beta(pot, e, x))
        sec = np.full(x.shape, np.inf)
        sec[inside] = pt.beta_min_section(pot, x[inside])
        for i in np.flatnonzero(~(np.abs(b) <= np.abs(sec))):
            bad.append(("yosida", kind, e[i], x[i]))
        env = np.asarray(pt.beta_hat_eps(pot, e, x))
        for i in np.flatnonzero(~(env <= np.asarray(pt.beta_hat(pot, x)))):
            bad.append(("moreau", kind, e[i], x[i]))
    detail = f"{n} samples, {len(bad)} violations"
    if bad:
        detail += f"; first {bad[0]}"
    return Check("regularization inequalities", not bad, detail)


def _convergence_orders(errors):
    e = np.asarray(errors)
    return np.log2(e[:-1] / e[1:])


@_timed
def check_elliptic():
    """Manufactured Dirichlet/harmonic problems, H^-1 identity, harmonic max principle."""
    msgs, ok = [], True
    # Dirichlet: -u'' = pi^2 sin(pi x) in 1D, sin(pi x) sin(pi y) in 2D
    for dim, cells in ((1, (16, 32, 64, 128)), (2, (8, 16, 32, 64))):
        errs = []
        for n in cells:
            g = build_grid(dim, [n] * dim, [1.0] * dim)
            u = np.prod([np.sin(np.pi * x) for x in g.coordinates()], axis=0)
            f = dim * np.pi ** 2 * u
            errs.append(np.max(np.abs(dirichlet_solve_array(g, f) - u)))
        orders = _convergence_orders(errs)
        ok &= bool(np.all(orders >= 1.9))
        msgs.append(f"dirichlet {dim}D orders {np.round(orders, 3).tolist()}")
    # harmonic: exp(pi x) sin(pi y) from its boundary values
    errs = []
    for n in (8, 16, 32, 64):
        g = build_grid(2, [n, n], [1.0, 1.0])
        X, Y = g.coordinates()
        exact = np.exp(np.pi * X) * np.sin(np.pi * Y)
        u = harmonic_extension(g, exact).values
        errs.append(np.max(np.abs(u - exact)))
        if n == 64:
            b = np.ravel(exact)[g.boundary_index]
            mp = (np.min(u) >= np.min(b) - 1e-10) and (np.max(u) <= np.max(b) + 1e-10)
            ok &= bool(mp)
            msgs.append(f"harmonic max principle {'ok' if mp else 'VIOLATED'}")
    orders = _convergence_orders(errs)
    ok &= bool(np.all(orders >= 1.9))
    msgs.append(f"harmonic orders {np.round(orders, 3).tolist()}")
    # <f, D f> = ||f||_*^2
    rng = np.random.default_rng(1)
    worst = 0.0
    for dim in (1, 2):
        g = build_grid(dim, [40] * dim, [1.0] * dim)
        for _ in range(5):
            f = rng.normal(size=g.shape)
            lhs = float(np.sum(g.weights * f * dirichlet_solve_array(g, f)))
            rhs = hminus1_norm(g, f) ** 2
            worst = max(worst, abs(lhs - rhs) / abs(rhs))
    ok &= worst <= 1e-8
    msgs.append(f"H^-1 identity rel err {worst:.1e}")
    return Check("elliptic oracles", ok, "; ".join(msgs))


def _kink_distance(problem, phi):
    chi = np.abs(phi - problem.phi_star)
    d = np.abs(chi - problem.eps)
    if problem.pot.kind == "obstacle":
        d = np.minimum(d, np.abs(np.abs(phi) - 1.0))
    return float(np.min(d))


@_timed
def check_jacobian(problem=None, n_states=5, n_dirs=5, seed=0, rtol=1e-5):
    """Jacobian action against central differences away from kinks."""
    if problem is None:
        problem = builtin_scenario().build_problem(31.5)
    rng = np.random.default_rng(seed)
    grid = problem.grid
    x = grid.coordinates()
    state0 = start(problem)
    worst = 0.0
    done = 0
    while done < n_states:
        amp = rng.uniform(0.05, 0.6)
        k = rng.integers(1, 6, size=grid.dim)
        phase = rng.uniform(0, 2 * np.pi, size=grid.dim)
        bump = np.prod([np.cos(kk * np.pi * xx + p) for kk, xx, p in zip(k, x, phase)], axis=0)
        phi = np.clip(problem.phi_star + amp * bump + rng.normal(scale=0.01, size=grid.shape),
                      -1.3, 1.3)
        if _kink_distance(problem, phi) < 1e-4:
            continue
        stage = Stage(0, problem.dt, state0.phi, state0.sigma, state0.mu_h)
        done += 1
        for _ in range(n_dirs):
            v = rng.normal(size=grid.shape)
            h = 1e-7
            fd = (residual_phi(phi + h * v, stage, problem)
                  - residual_phi(phi - h * v, stage, problem)) / (2 * h)
            jv = jacobian_apply(phi, v, problem)
            worst = max(worst, l2_norm(fd - jv, grid) / l2_norm(jv, grid))
    return Check("Jacobian vs finite differences", worst <= rtol,
                 f"worst relative error {worst:.2e} (limit {rtol:g})")


@_timed
def check_scenario_run(name="scenario-1d-eradication", steps=None):
    """Maximum principle, two-route mu, boundary mu and the certificate on a scenario."""
    cfg = builtin_scenario(name)
    inputs = prepare_certificate(cfg)
    rho = cfg["control"]["rho_factor"] * inputs.rho_star
    problem = cfg.build_problem(rho)
    worst = {"route": 0.0, "mu_boundary": 0.0}
    bidx = problem.grid.boundary_index

    def on_step(state):
        if state.step == 0:
            return
        stage = Stage(state.step - 1, state.t, state.phi_prev, state.sigma, state.mu_h)
        d = np.max(np.abs(mu_second_route(state.phi, stage, problem) - state.mu))
        worst["route"] = max(worst["route"], float(d))
        worst["mu_boundary"] = max(worst["mu_boundary"],
                                   float(np.max(np.abs(np.ravel(state.mu)[bidx]))))

    cert = inputs.at(rho)
    series = run(problem, cert, on_step, steps=steps).series
    margin = float(np.min(series.column("max_principle_margin")))
    ok = margin >= -1e-8 and worst["route"] <= 1e-8 and worst["mu_boundary"] == 0.0
    msgs = [f"max-principle margin {margin:.3e}", f"two-route mu {worst['route']:.1e}",
            f"boundary mu {worst['mu_boundary']:.1e}"]
    if cert.T_star is not None and steps is None:
        M0 = inputs.constants.M0
        env = sliding.verify_envelope(series, cert, cfg["certificate"]["envelope_tol"] * M0)
        t_num = sliding.detect_reaching(series, sliding.default_delta_slide(M0, problem.eps))
        mu_ok = float(np.max(series.column("mu_inf"))) <= cert.C_sys * rho + cert.C_hat + 1e-6
        ok &= env.passed and t_num is not None and t_num <= cert.T_star and mu_ok
        msgs.append(f"t_num {t_num} vs T* {cert.T_star:.4f}, envelope "
                    f"{'ok' if env.passed else 'FAILED'}, mu bound {'ok' if mu_ok else 'FAILED'}")
    return Check(f"{name} run", ok, "; ".join(msgs))


@_timed
def check_energy_decrease(T=0.2):
    """With no proliferation coupling and zero boundary data the energy cannot grow."""
    cfg = builtin_scenario().with_changes(
        model={"gamma1": 0.0, "gamma2": 0.0, "g": 0.3},
        time={"T": T, "dt": 1e-3},
        control={"rho": 31.5, "rho_factor": None})
    problem = cfg.build_problem(31.5)
    E = run(problem).series.column("energy")
    inc = np.diff(E) - 1e-8 * (1.0 + np.abs(E[:-1]))
    worst = float(np.max(inc))
    return Check("decoupled energy decrease", worst <= 0.0,
                 f"{E.size - 1} steps, largest increase beyond tolerance {worst:.2e}")


def _series_bytes(series):
    buf = _io.StringIO()
    for row in series:
        buf.write(",".join(io.format_number(v) for v in row) + "\n")
    return buf.getvalue()


@_timed
def check_determinism(T=0.05):
    cfg = builtin_scenario().with_changes(time={"T": T, "dt": 1e-3},
                                          control={"rho": 31.5, "rho_factor": None})
    a = simulate(cfg, with_certificate=False).series
    b = simulate(cfg, with_certificate=False).series
    same = _series_bytes(a) == _series_bytes(b)
    return Check("determinism", same, f"{len(a)} rows {'identical' if same else 'DIFFER'}")


def random_certificate_inputs(n, seed=0):
    """Random constants with ``C_sys < 1``, gains above the threshold."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        c = sliding.SlidingConstants(M=rng.uniform(0, 5), M0=rng.uniform(0.01, 2),
                                     M_pi_star=rng.uniform(0, 5), mu_gamma_sup=0.0,
                                     laplacian_phi_star_sup=0.0, xi_star_sup=0.0,
                                     xi_star=np.zeros(1))
        tau = rng.uniform(0.5, 8)
        measure = rng.uniform(0.2, 2)
        C_sh = rng.uniform(0, 0.99) * tau / (2 * measure ** (2 / 3))
        C_hat = rng.uniform(0, 3)
        T = rng.uniform(0.5, 5)
        base = sliding.certificate(c, C_sh, C_hat, tau, T, measure, 1.0)
        rho = base.rho_star * rng.uniform(1.01, 5)
        out.append(sliding.certificate(c, C_sh, C_hat, tau, T, measure, rho))
    return out


@_timed
def check_certificate_algebra(n=1000, seed=0):
    bad = 0
    for cert in random_certificate_inputs(n, seed):
        if not (cert.A_rho + cert.tau / cert.T * cert.M0 < cert.rho):
            bad += 1
        if not (0 <= cert.T_star < cert.T):
            bad += 1
    return Check("certificate algebra", bad == 0, f"{n} certificates, {bad} violations")


def integrate_comparison_inclusion(cert, dt, t_end):
    """Implicit Euler for ``tau w' + rho eta = A``, ``eta in sign(w)``, ``w(0) = M0``.

    Each step applies the resolvent of the sign graph, i.e. soft thresholding.
    """
    n = int(np.ceil(t_end / dt))
    w = np.empty(n + 1)
    w[0] = cert.M0
    shift = dt * cert.A_rho / cert.tau
    thresh = dt * cert.rho / cert.tau
    for k in range(n):
        z = w[k] + shift
        w[k + 1] = np.sign(z) * max(abs(z) - thresh, 0.0)
    return dt * np.arange(n + 1), w


@_timed
def check_comparison_closed_form(n=1000, seed=0, steps=400):
    worst_ratio = 0.0
    for cert in random_certificate_inputs(n, seed):
        dt = cert.T / steps
        t, w = integrate_comparison_inclusion(cert, dt, cert.T)
        err = float(np.max(np.abs(w - sliding.comparison_w(cert, t))))
        worst_ratio = max(worst_ratio, err / (2 * dt * cert.slope))
    return Check("comparison envelope closed form", worst_ratio <= 1.0,
                 f"{n} certificates, worst error / (2 dt slope) = {worst_ratio:.2e}")


def run_suite(quick=False, report=None):
    """Run every check; ``report(check)`` is called as each finishes."""
    checks = [
        lambda: check_regularization(),
        lambda: check_elliptic(),
        lambda: check_jacobian(),
        lambda: check_certificate_algebra(),
        lambda: check_comparison_closed_form(),
        lambda: check_determinism(),
        lambda: check_energy_decrease(),
        lambda: check_scenario_run("scenario-2d-smoke"),
    ]
    if not quick:
        checks.append(lambda: check_scenario_run())
    results = []
    for make in checks:
        c = make()
        results.append(c)
        if report is not None:
            report(c)
    return results
