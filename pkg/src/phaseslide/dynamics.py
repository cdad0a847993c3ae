"""Implicit time stepping of the regularized controlled tumor-growth system.

One step from ``t_n`` to ``t_{n+1} = t_n + dt``:

1. refresh the harmonic extension ``mu_h`` of the boundary data at ``t_{n+1}``;
2. :func:`step_sigma` -- implicit Euler for the nutrient with the phase lagged;
3. :func:`step_phi` -- semismooth Newton on the reduced phase equation

   ``D(d_t phi) + tau d_t phi - Delta phi + beta_eps(phi) + pi(phi)
   + rho sign_eps(phi - phi*) - mu_h = D((gamma1 sigma - gamma2) p(phi))``

   where ``D`` is the Dirichlet solver and the proliferation ``p`` is lagged;
4. :func:`recover_mu` -- ``mu = D(source - d_t phi)``.

The chemical potential never enters the nonlinear solve.  Arrays are
grid-shaped numpy arrays throughout.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import potentials as pt
from .core import Grid, TimeConfig, l2_norm, values_of
from .elliptic import (BoundaryData, LinearSolverError, _operators, dirichlet_energy,
                       dirichlet_solve_array, harmonic_extension, pcg)
from .series import TimeSeries

__all__ = [
    "ModelParams",
    "Problem",
    "SimulationState",
    "Stage",
    "RunResult",
    "SolverError",
    "NewtonError",
    "SimulationAborted",
    "proliferation",
    "sigma_star",
    "step_sigma",
    "residual_phi",
    "jacobian_apply",
    "step_phi",
    "recover_mu",
    "mu_second_route",
    "initial_mu",
    "discrete_energy",
    "start",
    "advance",
    "run",
]

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAXITER = 50
LINESEARCH_HALVINGS = 10


class SolverError(RuntimeError):
    """A nonlinear or linear solve inside a time step failed."""


class NewtonError(SolverError):
    def __init__(self, message, residual_norm, iterate):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterate = iterate


class SimulationAborted(SolverError):
    """A step failed; carries the diagnostics recorded up to the failure."""

    def __init__(self, message, series, state):
        super().__init__(message)
        self.series = series
        self.state = state


@dataclass(frozen=True)
class ModelParams:
    """Rates and coefficients of the state system.

    ``g`` is a float, a grid-shaped array (constant in time) or a stack of
    grid-shaped arrays, one per time step (``g[n]`` drives step n -> n+1).
    """

    gamma1: float = 1.0
    gamma2: float = 0.5
    gamma3: float = 1.0
    gamma4: float = 1.0
    tau: float = 4.0
    sigma_s: float = 1.0
    p_max: float = 1.0
    g: object = 0.0

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "gamma3"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be a nonnegative rate, got {v}")
        for name in ("gamma4", "tau", "p_max"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if not np.isfinite(self.sigma_s):
            raise ValueError("sigma_s must be finite")
        if not np.all(np.isfinite(np.asarray(self.g, dtype=float))):
            raise ValueError("source g must be finite")


def proliferation(params, r):
    """``p(r) = p_max * clamp((1 + r) / 2, 0, 1)``: bounded, Lipschitz p_max/2."""
    return params.p_max * np.clip(0.5 * (1.0 + np.asarray(r, dtype=float)), 0.0, 1.0)


def sigma_star(params, sigma0, g=None):
    """Nutrient bound ``max(||sigma_s + g/gamma4||_inf, ||sigma0||_inf)``."""
    g = params.g if g is None else g
    a = float(np.max(np.abs(params.sigma_s + np.asarray(g, dtype=float) / params.gamma4)))
    return max(a, float(np.max(np.abs(values_of(sigma0)))))


@dataclass
class Problem:
    """Everything a run needs: discretization, model, potential and control."""

    grid: Grid
    time: TimeConfig
    params: ModelParams
    pot: pt.PotentialSpec
    eps: float
    rho: float
    phi0: np.ndarray
    sigma0: np.ndarray
    phi_star: np.ndarray
    mu_gamma: BoundaryData = field(default_factory=lambda: BoundaryData(constant=0.0))
    newton_tol: float = NEWTON_TOL
    newton_maxiter: int = NEWTON_MAXITER

    def __post_init__(self):
        g = self.grid
        self.phi0 = np.array(values_of(self.phi0, g), dtype=float)
        self.sigma0 = np.array(values_of(self.sigma0, g), dtype=float)
        self.phi_star = np.array(values_of(self.phi_star, g), dtype=float)
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not (np.isfinite(self.rho) and self.rho >= 0):
            raise ValueError(f"rho must be nonnegative, got {self.rho}")
        gs = np.asarray(self.params.g, dtype=float)
        if gs.ndim not in (0,) and gs.shape != g.shape and gs.shape != (self.time.steps,) + g.shape:
            raise ValueError(f"source g has shape {gs.shape}; expected scalar, {g.shape} "
                             f"or {(self.time.steps,) + g.shape}")
        s_star = self.sigma_star
        if s_star > 0 and self.eps > 1.0 / s_star:
            log.warning("eps = %g capped at 1/sigma* = %g", self.eps, 1.0 / s_star)
            self.eps = 1.0 / s_star
        if not self.params.tau / self.time.dt > self.pot.lipschitz_pi:
            raise ValueError(
                f"dt = {self.time.dt} too large: need tau/dt > L_pi = {self.pot.lipschitz_pi} "
                "for a positive definite Newton Jacobian")

    @property
    def dt(self):
        return self.time.dt

    @property
    def sigma_star(self):
        return sigma_star(self.params, self.sigma0)

    def g_at(self, n):
        gs = np.asarray(self.params.g, dtype=float)
        if gs.ndim == 0:
            return float(gs)
        if gs.shape == self.grid.shape:
            return gs
        return gs[n]

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass
class SimulationState:
    """Fields at time ``t``.  ``mu`` vanishes on the boundary nodes."""

    step: int
    t: float
    phi: np.ndarray
    sigma: np.ndarray
    mu: np.ndarray
    phi_prev: np.ndarray
    mu_h: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray


@dataclass
class Stage:
    """Intermediate data for the phase solve of step n -> n+1.

    ``phi`` is the old phase, ``sigma`` the already updated nutrient and
    ``mu_h`` the harmonic extension at the new time.
    """

    step: int
    t_new: float
    phi: np.ndarray
    sigma: np.ndarray
    mu_h: np.ndarray


def step_sigma(state, problem):
    """Implicit Euler for the nutrient with lagged phase.

    Solves ``(I/dt - Delta + gamma3 p(phi_n) + gamma4) sigma = sigma_n/dt +
    gamma4 sigma_s + g`` with Neumann conditions.  The matrix is an M-matrix,
    which gives the discrete maximum principle.
    """
    grid, par, dt = problem.grid, problem.params, problem.dt
    lap = _operators(grid)["neumann"]
    diag = 1.0 / dt + par.gamma4 + par.gamma3 * np.ravel(proliferation(par, state.phi))
    A = (lap + sp.diags(diag)).tocsc()
    rhs = np.ravel(state.sigma) / dt + par.gamma4 * par.sigma_s + np.ravel(
        np.broadcast_to(problem.g_at(state.step), grid.shape))
    return spla.spsolve(A, rhs).reshape(grid.shape)


def _source(stage, problem):
    par = problem.params
    sig = pt.clamp_Ieps(problem.eps, stage.sigma)
    return (par.gamma1 * sig - par.gamma2) * proliferation(par, stage.phi)


def _local_terms(phi, problem):
    """Pointwise part ``beta_eps + pi + rho sign_eps`` and its derivative."""
    pot, eps, rho = problem.pot, problem.eps, problem.rho
    b, db = pt.yosida_beta_and_prime(pot, eps, phi)
    chi = phi - problem.phi_star
    val = b + pt.pi_smooth(pot, phi) + rho * pt.sign_eps(eps, chi)
    der = db - pot.lipschitz_pi + rho * pt.sign_eps_prime(eps, chi)
    return val, der


def residual_phi(phi_candidate, stage, problem, source_solved=None):
    """Residual of the reduced phase equation at ``phi_candidate``."""
    grid, dt, tau = problem.grid, problem.dt, problem.params.tau
    if source_solved is None:
        source_solved = dirichlet_solve_array(grid, _source(stage, problem))
    D = (phi_candidate - stage.phi) / dt
    lap = (_operators(grid)["neumann"] @ np.ravel(phi_candidate)).reshape(grid.shape)
    local, _ = _local_terms(phi_candidate, problem)
    return (dirichlet_solve_array(grid, D) + tau * D + lap + local
            - stage.mu_h - source_solved)


def jacobian_apply(phi, v, problem):
    """Action of the residual's Jacobian at ``phi`` on a direction ``v``."""
    grid, dt, tau = problem.grid, problem.dt, problem.params.tau
    _, der = _local_terms(phi, problem)
    lap = (_operators(grid)["neumann"] @ np.ravel(v)).reshape(grid.shape)
    return dirichlet_solve_array(grid, v) / dt + (tau / dt + der) * v + lap


def _solve_newton_system(phi, rhs, problem):
    """Solve ``J(phi) x = rhs`` by CG in the quadrature inner product.

    ``W J`` is symmetric positive definite when ``tau/dt > L_pi``; the local
    part ``K = tau/dt + diag + (-Delta)`` is factorized and used as the
    preconditioner, leaving only the compact term ``D/dt`` to iterate on.
    """
    grid, dt, tau = problem.grid, problem.dt, problem.params.tau
    w = np.ravel(grid.weights)
    lap = _operators(grid)["neumann"]
    _, der = _local_terms(phi, problem)
    K = (lap + sp.diags(tau / dt + np.ravel(der))).tocsc()
    lu = spla.splu(K)
    shape = grid.shape

    def matvec(x):
        return w * (np.ravel(dirichlet_solve_array(grid, x.reshape(shape))) / dt + K @ x)

    x, _ = pcg(matvec, w * np.ravel(rhs), precond=lambda r: lu.solve(r / w),
               rtol=1e-13, maxiter=10 * grid.n_nodes)
    return x.reshape(shape)


def step_phi(stage, problem):
    """Semismooth Newton with half-step line search for the new phase.

    Returns ``(phi_new, iterations)``.  Converged when the residual sup-norm
    is at most ``newton_tol * (1 + ||phi_n||_inf)``.
    """
    grid = problem.grid
    w = grid.weights
    src = dirichlet_solve_array(grid, _source(stage, problem))
    tol = problem.newton_tol * (1.0 + float(np.max(np.abs(stage.phi))))
    phi = stage.phi.copy()
    R = residual_phi(phi, stage, problem, src)
    for it in range(problem.newton_maxiter + 1):
        rmax = float(np.max(np.abs(R)))
        if rmax <= tol:
            return phi, it
        if it == problem.newton_maxiter:
            break
        try:
            delta = _solve_newton_system(phi, -R, problem)
        except LinearSolverError as exc:
            raise NewtonError(f"Newton linear solve failed: {exc}", rmax, phi) from exc
        norm0 = np.sqrt(np.sum(w * R * R))
        lam = 1.0
        for _ in range(LINESEARCH_HALVINGS + 1):
            trial = phi + lam * delta
            R_trial = residual_phi(trial, stage, problem, src)
            if np.sqrt(np.sum(w * R_trial * R_trial)) < norm0:
                break
            lam *= 0.5
        phi, R = trial, R_trial
    raise NewtonError(
        f"Newton did not converge in {problem.newton_maxiter} iterations at t = "
        f"{stage.t_new:g} (residual {rmax:.3e} > {tol:.3e})", rmax, phi)


def recover_mu(phi_new, stage, problem):
    """``mu = D(source - d_t phi)``; vanishes on the boundary."""
    D = (phi_new - stage.phi) / problem.dt
    return dirichlet_solve_array(problem.grid, _source(stage, problem) - D)


def mu_second_route(phi_new, stage, problem):
    """``mu`` read off the constitutive relation; equals :func:`recover_mu` at convergence."""
    grid = problem.grid
    D = (phi_new - stage.phi) / problem.dt
    lap = (_operators(grid)["neumann"] @ np.ravel(phi_new)).reshape(grid.shape)
    local, _ = _local_terms(phi_new, problem)
    return problem.params.tau * D + lap + local - stage.mu_h


def initial_mu(problem, mu_h0=None):
    """Chemical potential at t = 0 from the phase equation written at t = 0.

    Solves ``(D + tau) v = D(source_0) + Delta phi0 - beta_eps - pi - rho zeta
    + mu_h`` for ``v = d_t phi(0)`` and returns ``(mu0, v)``.
    """
    grid, tau = problem.grid, problem.params.tau
    if mu_h0 is None:
        mu_h0 = harmonic_extension(grid, problem.mu_gamma.at(grid, 0.0)).values
    stage0 = Stage(0, 0.0, problem.phi0, problem.sigma0, mu_h0)
    src = _source(stage0, problem)
    lap = (_operators(grid)["neumann"] @ np.ravel(problem.phi0)).reshape(grid.shape)
    local, _ = _local_terms(problem.phi0, problem)
    rhs = dirichlet_solve_array(grid, src) - lap - local + mu_h0
    w = np.ravel(grid.weights)
    shape = grid.shape

    def matvec(x):
        return w * (np.ravel(dirichlet_solve_array(grid, x.reshape(shape))) + tau * x)

    v, _ = pcg(matvec, w * np.ravel(rhs), precond=lambda r: r / (tau * w), rtol=1e-13)
    v = v.reshape(shape)
    return dirichlet_solve_array(grid, src - v), v


def discrete_energy(phi, problem):
    """``sum (1/2)|grad phi|^2 + B_eps(phi) + pi_hat(phi) + rho |phi - phi*|_eps``."""
    grid, pot, eps = problem.grid, problem.pot, problem.eps
    dens = (pt.beta_hat_eps(pot, eps, phi) + pt.pi_hat(pot, phi)
            + problem.rho * pt.abs_eps(eps, phi - problem.phi_star))
    return dirichlet_energy(grid, phi) + float(np.sum(grid.weights * dens))


@dataclass
class RunResult:
    series: TimeSeries
    state: SimulationState


def _diagnostics(series, state, problem, s_star, iters, w_bound):
    grid = problem.grid
    dev = state.phi - problem.phi_star
    series.append(
        step=state.step,
        t=state.t,
        sup_dev=float(np.max(np.abs(dev))),
        l2_dev=l2_norm(dev, grid),
        mu_inf=float(np.max(np.abs(state.mu))),
        sigma_min=float(np.min(state.sigma)),
        sigma_max=float(np.max(state.sigma)),
        energy=discrete_energy(state.phi, problem),
        newton_iters=iters,
        w_bound=w_bound(state.t),
        max_principle_margin=s_star - float(np.max(np.abs(state.sigma))),
    )


def start(problem):
    """Initial state, including ``mu(0)`` from the time-zero identity."""
    grid = problem.grid
    mu_h0 = harmonic_extension(grid, problem.mu_gamma.at(grid, 0.0)).values
    mu0, _ = initial_mu(problem, mu_h0)
    b = np.asarray(pt.yosida_beta(problem.pot, problem.eps, problem.phi0))
    z = np.asarray(pt.sign_eps(problem.eps, problem.phi0 - problem.phi_star))
    return SimulationState(0, 0.0, problem.phi0.copy(), problem.sigma0.copy(), mu0,
                           problem.phi0.copy(), mu_h0, b, z)


def advance(state, problem):
    """One full step; returns ``(new_state, newton_iterations)``."""
    grid = problem.grid
    t_new = (state.step + 1) * problem.dt
    mu_h = harmonic_extension(grid, problem.mu_gamma.at(grid, t_new)).values
    sigma_new = step_sigma(state, problem)
    stage = Stage(state.step, t_new, state.phi, sigma_new, mu_h)
    phi_new, iters = step_phi(stage, problem)
    mu_new = recover_mu(phi_new, stage, problem)
    xi = np.asarray(pt.yosida_beta(problem.pot, problem.eps, phi_new))
    zeta = np.asarray(pt.sign_eps(problem.eps, phi_new - problem.phi_star))
    new = SimulationState(state.step + 1, t_new, phi_new, sigma_new, mu_new,
                          state.phi, mu_h, xi, zeta)
    return new, iters


def run(problem, certificate=None, on_step=None, steps=None):
    """Integrate over ``[0, T]`` and return a :class:`RunResult`.

    ``steps`` stops after that many steps instead (0 gives the initial row only).

    ``certificate`` (a :class:`~phaseslide.sliding.SlidingCertificate` with a
    reaching time) fills the ``w_bound`` column.  ``on_step(state)`` is called
    after every step, including the initial state.  A failed step raises
    :class:`SimulationAborted` carrying the partial series.
    """
    if certificate is not None and certificate.T_star is not None:
        from .sliding import comparison_w

        def w_bound(t):
            return comparison_w(certificate, t)
    else:
        def w_bound(t):
            return np.nan

    s_star = problem.sigma_star
    series = TimeSeries()
    state = start(problem)
    _diagnostics(series, state, problem, s_star, 0, w_bound)
    if on_step is not None:
        on_step(state)
    n_steps = problem.time.steps if steps is None else min(int(steps), problem.time.steps)
    for _ in range(n_steps):
        try:
            state, iters = advance(state, problem)
        except (SolverError, LinearSolverError, pt.ConvergenceError) as exc:
            raise SimulationAborted(
                f"step {state.step + 1} failed: {exc}", series, state) from exc
        _diagnostics(series, state, problem, s_star, iters, w_bound)
        if on_step is not None:
            on_step(state)
    return RunResult(series, state)
