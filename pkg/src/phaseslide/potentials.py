"""Double-well potentials F = beta_hat + pi_hat and their Yosida regularizations.

All functions are vectorized: they accept a scalar or an array for ``r`` (and
for ``eps``, broadcast against ``r``) and return a float or an array.

The convex part ``beta_hat`` is proper, l.s.c., nonnegative with
``beta_hat(0) = 0``; ``beta`` is its subdifferential.  The smooth part
``pi_hat`` has a Lipschitz derivative ``pi``.  The three built-ins split as

=============  =======================================  ==================
kind           beta_hat(r)                              pi_hat(r)
=============  =======================================  ==================
regular        r**4 / 4                                 1/4 - r**2 / 2
logarithmic    (1+r) ln(1+r) + (1-r) ln(1-r)            -c0 r**2
obstacle       indicator of [-1, 1]                     -c0 r**2
=============  =======================================  ==================
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PotentialSpec",
    "DomainError",
    "ConvergenceError",
    "regular",
    "logarithmic",
    "obstacle",
    "beta_hat",
    "beta_min_section",
    "beta_prime",
    "pi_smooth",
    "pi_prime",
    "pi_hat",
    "resolvent",
    "yosida_beta",
    "yosida_beta_prime",
    "yosida_beta_and_prime",
    "beta_hat_eps",
    "sign_eps",
    "sign_eps_prime",
    "abs_eps",
    "clamp_Ieps",
]

KINDS = ("regular", "logarithmic", "obstacle")

RESOLVENT_MAXITER = 100

_ONE_BELOW = np.nextafter(1.0, 0.0)


class DomainError(ValueError):
    """Argument outside the effective domain of beta."""


class ConvergenceError(RuntimeError):
    """Scalar resolvent solve did not converge."""


@dataclass(frozen=True)
class PotentialSpec:
    kind: str
    c0: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "logarithmic" and not self.c0 > 1:
            raise ValueError(f"logarithmic potential needs c0 > 1 for a double well, got {self.c0}")
        if self.kind == "obstacle" and not self.c0 > 0:
            raise ValueError(f"obstacle potential needs c0 > 0, got {self.c0}")

    @property
    def domain(self):
        """Endpoints of D(beta_hat): the real line, (-1, 1) or [-1, 1]."""
        if self.kind == "regular":
            return (-np.inf, np.inf)
        return (-1.0, 1.0)

    @property
    def domain_closed(self):
        return self.kind == "obstacle"

    @property
    def lipschitz_pi(self):
        return 1.0 if self.kind == "regular" else 2.0 * self.c0

    def describe_domain(self):
        if self.kind == "regular":
            return "(-inf, inf)"
        return "[-1, 1]" if self.domain_closed else "(-1, 1)"


def regular():
    return PotentialSpec("regular")


def logarithmic(c0=2.0):
    return PotentialSpec("logarithmic", c0)


def obstacle(c0=1.0):
    return PotentialSpec("obstacle", c0)


def _out(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def _log_ratio(y):
    # ln((1+y)/(1-y)) without cancellation near 0
    return np.log1p(y) - np.log1p(-y)


def beta_hat(pot, r):
    r = np.asarray(r, dtype=float)
    if pot.kind == "regular":
        return _out(0.25 * r**4)
    inside = np.abs(r) <= 1.0
    if pot.kind == "obstacle":
        return _out(np.where(inside, 0.0, np.inf))
    # for small |r| the form r ln((1+r)/(1-r)) + ln(1 - r^2) avoids cancellation;
    # near +-1 the direct form keeps 1 - r exact
    with np.errstate(divide="ignore", invalid="ignore"):
        rc = np.clip(r, -_ONE_BELOW, _ONE_BELOW)
        small = rc * _log_ratio(rc) + np.log1p(-rc * rc)
        large = (1 + rc) * np.log1p(rc) + (1 - rc) * np.log1p(-rc)
        val = np.where(np.abs(rc) <= 0.5, small, large)
    val = np.where(np.abs(r) == 1.0, 2.0 * np.log(2.0), val)
    return _out(np.where(inside, val, np.inf))


def _check_domain(pot, r):
    if pot.kind == "regular":
        return
    bad = (np.abs(r) > 1.0) if pot.domain_closed else (np.abs(r) >= 1.0)
    bad |= ~np.isfinite(r)
    if np.any(bad):
        first = float(np.ravel(r)[np.flatnonzero(np.ravel(bad))[0]])
        raise DomainError(f"r = {first!r} outside D(beta) = {pot.describe_domain()} "
                          f"for the {pot.kind} potential")


def beta_min_section(pot, r):
    """Element of beta(r) of minimum modulus; ``DomainError`` outside D(beta)."""
    r = np.asarray(r, dtype=float)
    _check_domain(pot, r)
    if pot.kind == "regular":
        return _out(r**3)
    if pot.kind == "obstacle":
        # normal cone at +-1 is a half line containing 0
        return _out(np.zeros_like(r))
    return _out(_log_ratio(r))


def beta_prime(pot, y):
    """Derivative of beta at interior points of its domain."""
    y = np.asarray(y, dtype=float)
    if pot.kind == "regular":
        return _out(3.0 * y * y)
    if pot.kind == "obstacle":
        return _out(np.zeros_like(y))
    with np.errstate(divide="ignore"):
        return _out(2.0 / ((1.0 - y) * (1.0 + y)))


def pi_smooth(pot, r):
    r = np.asarray(r, dtype=float)
    if pot.kind == "regular":
        return _out(-r)
    return _out(-2.0 * pot.c0 * r)


def pi_prime(pot, r=0.0):
    return _out(np.full_like(np.asarray(r, dtype=float), -pot.lipschitz_pi))


def pi_hat(pot, r):
    r = np.asarray(r, dtype=float)
    if pot.kind == "regular":
        return _out(0.25 - 0.5 * r * r)
    return _out(-pot.c0 * r * r)


def _check_eps(eps):
    if not np.all(np.asarray(eps) > 0):
        raise ValueError(f"eps must be positive, got {eps}")


def _solve_resolvent(pot, eps, r):
    """Solve y + eps * beta(y) = r by Newton with a bisection safeguard.

    The root lies between 0 and r because beta is monotone with beta(0) = 0,
    so |J(r)| <= |r| holds by construction.  Iteration stops once the Newton
    correction is below a few ulps of y (or the bracket has collapsed), which
    is as accurate as double precision allows; near the log singularity the
    residual itself cannot be made small because beta amplifies the last
    ulp of y.
    """
    lo = np.minimum(r, 0.0)
    hi = np.maximum(r, 0.0)
    if pot.kind == "logarithmic":
        lo = np.maximum(lo, -_ONE_BELOW)
        hi = np.minimum(hi, _ONE_BELOW)
    y = np.clip(r, lo, hi)
    done = r == 0.0
    for _ in range(RESOLVENT_MAXITER):
        if np.all(done):
            return y
        if pot.kind == "regular":
            b = y**3
            db = 3.0 * y * y
        else:
            b = _log_ratio(y)
            db = 2.0 / ((1.0 - y) * (1.0 + y))
        h = y + eps * b - r
        hi = np.where(h > 0, y, hi)
        lo = np.where(h < 0, y, lo)
        y_new = y - h / (1.0 + eps * db)
        outside = ~((y_new >= lo) & (y_new <= hi))
        y_new = np.where(outside, 0.5 * (lo + hi), y_new)
        # a few ulps: rounding in h can make Newton cycle between neighbours
        ulp = np.spacing(np.maximum(np.abs(lo), np.abs(hi)))
        collapsed = (hi - lo) <= 4.0 * ulp
        converged = (h == 0) | collapsed | (~outside & (np.abs(y_new - y) <= 4.0 * ulp))
        y = np.where(done | (h == 0), y, y_new)
        done = done | converged
    raise ConvergenceError(
        f"resolvent of the {pot.kind} potential (eps={eps}) did not converge "
        f"in {RESOLVENT_MAXITER} iterations")


def resolvent(pot, eps, r):
    """J_eps(r) = (I + eps*beta)^{-1}(r)."""
    _check_eps(eps)
    r = np.asarray(r, dtype=float)
    if pot.kind == "obstacle":
        return _out(np.clip(r, -1.0, 1.0))
    return _out(_solve_resolvent(pot, eps, r))


def _yosida_from_resolvent(pot, eps, r, y):
    # Near 0, beta(J_eps(r)) avoids the cancellation in r - y and inherits
    # |beta_eps(r)| <= |beta(r)| from |y| <= |r|.  For the logarithm, once
    # |y| > 1/2 the quotient is the better conditioned of the two (beta
    # amplifies rounding in y by 2/(1-y^2)) and r - y >= eps*ln3 leaves a
    # relative margin of order eps for the inequality.
    if pot.kind == "regular":
        return y**3
    return np.where(np.abs(y) > 0.5, (r - y) / eps, _log_ratio(y))


def yosida_beta(pot, eps, r):
    """Yosida regularization beta_eps(r) = (r - J_eps(r)) / eps."""
    _check_eps(eps)
    r = np.asarray(r, dtype=float)
    if pot.kind == "obstacle":
        return _out((r - np.clip(r, -1.0, 1.0)) / eps)
    return _out(_yosida_from_resolvent(pot, eps, r, _solve_resolvent(pot, eps, r)))


def yosida_beta_prime(pot, eps, r):
    """Derivative of beta_eps; at the obstacle kinks the inner value 0 is used."""
    _check_eps(eps)
    r = np.asarray(r, dtype=float)
    if pot.kind == "obstacle":
        return _out(np.where(np.abs(r) > 1.0, 1.0 / eps, 0.0))
    y = _solve_resolvent(pot, eps, r)
    b = np.asarray(beta_prime(pot, y))
    with np.errstate(invalid="ignore"):
        out = b / (1.0 + eps * b)
    return _out(np.where(np.isfinite(b), out, 1.0 / eps))


def yosida_beta_and_prime(pot, eps, r):
    """``(beta_eps(r), beta_eps'(r))`` from a single resolvent solve (arrays)."""
    r = np.asarray(r, dtype=float)
    if pot.kind == "obstacle":
        outside = np.abs(r) > 1.0
        return (r - np.clip(r, -1.0, 1.0)) / eps, np.where(outside, 1.0 / eps, 0.0)
    y = _solve_resolvent(pot, eps, r)
    b = np.asarray(beta_prime(pot, y))
    with np.errstate(invalid="ignore"):
        db = np.where(np.isfinite(b), b / (1.0 + eps * b), 1.0 / eps)
    return _yosida_from_resolvent(pot, eps, r, y), db


def beta_hat_eps(pot, eps, r):
    """Moreau envelope of beta_hat, the primitive of beta_eps vanishing at 0."""
    _check_eps(eps)
    r = np.asarray(r, dtype=float)
    if pot.kind == "obstacle":
        d = r - np.clip(r, -1.0, 1.0)
        return _out(d * d / (2.0 * eps))
    y = _solve_resolvent(pot, eps, r)
    b = _yosida_from_resolvent(pot, eps, r, y)
    env = np.asarray(beta_hat(pot, y)) + 0.5 * eps * b * b
    # the envelope lies below beta_hat; when the gap is below rounding
    # (tiny eps * r^2) the bound itself is the correctly rounded value
    return _out(np.minimum(env, beta_hat(pot, r)))


def sign_eps(eps, r):
    r = np.asarray(r, dtype=float)
    return _out(r / np.maximum(eps, np.abs(r)))


def sign_eps_prime(eps, r):
    """Derivative of sign_eps; the smaller one-sided value 0 at |r| = eps."""
    r = np.asarray(r, dtype=float)
    return _out(np.where(np.abs(r) < eps, 1.0 / eps, 0.0))


def abs_eps(eps, r):
    """Primitive of sign_eps vanishing at 0 (Huber function)."""
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    return _out(np.where(a <= eps, r * r / (2.0 * eps), a - 0.5 * eps))


def clamp_Ieps(eps, r):
    r = np.asarray(r, dtype=float)
    return _out(np.clip(r, -1.0 / eps, 1.0 / eps))
