"""Sliding-mode certificate: reaching threshold, reaching time and comparison envelope.

Given the data constants ``M``, ``M0``, ``M_pi*``, the embedding constant
``C_sh`` and the rho-independent part ``C_hat`` of the bound on the chemical
potential, the feedback gain ``rho`` forces ``phi = phi*`` after

    T* = tau * M0 / (rho - A(rho)),   A(rho) = C_sys rho + C_hat + M + M_pi*,

provided ``C_sys = 2 C_sh |Omega|^(2/3) / tau < 1`` and ``rho > rho*`` with

    rho* = (C_hat + M + M_pi* + tau M0 / T) / (1 - C_sys).

The pointwise deviation stays below ``w(t) = (M0 - (rho - A) t / tau)^+``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import potentials as pt
from .core import values_of
from .elliptic import laplacian

__all__ = [
    "SlidingConstants",
    "SlidingCertificate",
    "EnvelopeReport",
    "compute_constants",
    "certificate",
    "comparison_w",
    "detect_reaching",
    "verify_envelope",
    "estimate_chat",
    "default_delta_slide",
]


@dataclass(frozen=True)
class SlidingConstants:
    M: float
    M0: float
    M_pi_star: float
    mu_gamma_sup: float
    laplacian_phi_star_sup: float
    xi_star_sup: float
    xi_star: np.ndarray = field(repr=False, compare=False)


def _sup_pi_shifted(pot, phi_star, radius, exact=None):
    """``sup |pi(phi*(x) + r)|`` over nodes x and ``|r| <= radius``.

    Exact for affine pi (all built-ins): the sup sits at ``r = +-radius``.
    Otherwise 101 samples per node plus the Lipschitz slack of the sampling gap.
    """
    ps = np.ravel(phi_star)
    if exact is None:
        exact = pot.kind in pt.KINDS
    if exact:
        return float(max(np.max(np.abs(pt.pi_smooth(pot, ps + radius))),
                         np.max(np.abs(pt.pi_smooth(pot, ps - radius)))))
    r = np.linspace(-radius, radius, 101)
    vals = np.abs(pt.pi_smooth(pot, ps[:, None] + r[None, :]))
    return float(np.max(vals)) + pot.lipschitz_pi * (2 * radius / 100)


def compute_constants(phi0, phi_star, mu_gamma, pot, grid, laplacian_phi_star_sup=None,
                      domain_margin=1e-6):
    """Data constants ``M``, ``M0`` and ``M_pi*``.

    ``mu_gamma`` is a :class:`~phaseslide.elliptic.BoundaryData` or a number
    (its sup-norm).  ``||Delta phi*||_inf`` comes from the discrete Neumann
    Laplacian unless ``laplacian_phi_star_sup`` supplies a value.
    """
    ps = values_of(phi_star, grid)
    p0 = values_of(phi0, grid)
    lo, hi = pot.domain
    if pot.kind != "regular" and (np.min(ps) <= lo + domain_margin
                                  or np.max(ps) >= hi - domain_margin):
        raise pt.DomainError(
            f"phi* range [{np.min(ps)}, {np.max(ps)}] must lie strictly inside "
            f"D(beta) = {pot.describe_domain()}")
    xi_star = np.asarray(pt.beta_min_section(pot, ps))
    mg = mu_gamma.sup() if hasattr(mu_gamma, "sup") else abs(float(mu_gamma))
    if laplacian_phi_star_sup is None:
        lap = laplacian(grid, "neumann_homogeneous").apply_array(ps)
        laplacian_phi_star_sup = float(np.max(np.abs(lap)))
    xs = float(np.max(np.abs(xi_star)))
    M = mg + laplacian_phi_star_sup + xs
    M0 = float(np.max(np.abs(p0 - ps)))
    return SlidingConstants(M, M0, _sup_pi_shifted(pot, ps, M0), mg,
                            float(laplacian_phi_star_sup), xs, xi_star)


@dataclass(frozen=True)
class SlidingCertificate:
    """All certificate quantities and the provenance of the non-computable ones."""

    C_sh: float
    C_sh_source: str
    C_sys: float
    C_hat: float
    C_hat_source: str
    M: float
    M0: float
    M_pi_star: float
    tau: float
    T: float
    measure: float
    rho: float
    A_rho: float
    rho_star: Optional[float]
    T_star: Optional[float]

    @property
    def smallness_ok(self):
        return self.C_sys < 1.0

    @property
    def slope(self):
        """Decay rate ``(rho - A(rho)) / tau`` of the comparison envelope."""
        return (self.rho - self.A_rho) / self.tau

    def A(self, rho):
        return self.C_sys * rho + self.C_hat + self.M + self.M_pi_star

    def to_text(self):
        """Flat ``key = value`` block; absent values are written as ``none``."""
        lines = []
        for k, v in asdict(self).items():
            if v is None:
                lines.append(f"{k} = none")
            elif isinstance(v, str):
                lines.append(f"{k} = {v}")
            else:
                lines.append(f"{k} = {v!r}")
        lines.append(f"smallness_condition = {'satisfied' if self.smallness_ok else 'violated'}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        raw = {}
        for line in text.splitlines():
            if "=" not in line:
                continue
            k, v = (s.strip() for s in line.split("=", 1))
            raw[k] = v
        kw = {}
        for name, f in cls.__dataclass_fields__.items():
            v = raw[name]
            if name.endswith("_source"):
                kw[name] = v
            else:
                kw[name] = None if v == "none" else float(v)
        return cls(**kw)


def certificate(constants, C_sh, C_hat, tau, T, measure, rho,
                C_sh_source="estimated", C_hat_source="user-supplied"):
    """Assemble the certificate for gain ``rho``.

    ``rho_star`` is absent when the smallness condition fails; ``T_star`` is
    present only when it holds and ``rho > rho_star``.
    """
    if not (tau > 0 and T > 0 and measure > 0):
        raise ValueError("tau, T and |Omega| must be positive")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    c = constants
    C_sys = C_sh * 2.0 * measure ** (2.0 / 3.0) / tau
    A_rho = C_sys * rho + C_hat + c.M + c.M_pi_star
    rho_star = T_star = None
    if C_sys < 1.0:
        rho_star = (C_hat + c.M + c.M_pi_star + tau / T * c.M0) / (1.0 - C_sys)
        if rho > rho_star:
            T_star = tau * c.M0 / (rho - A_rho)
    return SlidingCertificate(float(C_sh), C_sh_source, C_sys, float(C_hat), C_hat_source,
                              c.M, c.M0, c.M_pi_star, float(tau), float(T), float(measure),
                              float(rho), A_rho, rho_star, T_star)


def comparison_w(cert, t):
    """Comparison envelope ``w(t) = (M0 - (rho - A) t / tau)^+``."""
    if cert.T_star is None:
        raise ValueError("certificate has no reaching time (smallness violated or rho <= rho*)")
    t = np.asarray(t, dtype=float)
    w = np.maximum(0.0, cert.M0 - cert.slope * t)
    w = np.where(t >= cert.T_star, 0.0, w)
    return float(w) if w.ndim == 0 else w


def default_delta_slide(M0, eps):
    """Reaching threshold ``max(1e-3 * M0, eps)``.

    The regularized feedback ``rho sign_eps`` is linear inside ``|r| < eps``,
    so the regularized state settles at a distance of order
    ``eps * |pi(phi*)| / rho`` from the target instead of reaching it.
    """
    return max(1e-3 * M0, eps)


def detect_reaching(series, delta_slide):
    """First recorded time after which ``sup|phi - phi*| <= delta_slide`` for good.

    Returns ``None`` when the last row is still outside the band.
    """
    if not delta_slide > 0:
        raise ValueError("delta_slide must be positive")
    dev = series.column("sup_dev")
    t = series.column("t")
    if dev.size == 0 or dev[-1] > delta_slide:
        return None
    outside = np.flatnonzero(dev > delta_slide)
    first = 0 if outside.size == 0 else outside[-1] + 1
    return float(t[first])


@dataclass
class EnvelopeReport:
    tol: float
    violations: list
    max_excess: float

    @property
    def passed(self):
        return not self.violations


def verify_envelope(series, cert, tol):
    """Check ``sup|phi - phi*|(t) <= w(t) + tol`` at every recorded step."""
    t = series.column("t")
    dev = series.column("sup_dev")
    w = np.asarray(comparison_w(cert, t))
    excess = dev - (w + tol)
    bad = np.flatnonzero(excess > 0)
    violations = [(int(series.rows[i][0]), float(t[i]), float(dev[i]), float(w[i]))
                  for i in bad]
    return EnvelopeReport(tol, violations, float(np.max(dev - w)) if dev.size else 0.0)


def estimate_chat(series, C_sys, rho_pilot):
    """``max_t (||mu(t)||_inf - C_sys rho_pilot)``, floored at 0, from a pilot run."""
    mu = series.column("mu_inf")
    if mu.size == 0:
        return 0.0
    return max(0.0, float(np.max(mu - C_sys * rho_pilot)))
