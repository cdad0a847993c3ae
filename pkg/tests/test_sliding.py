import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from phaseslide import potentials as pt
from phaseslide.core import build_grid
from phaseslide.elliptic import BoundaryData
from phaseslide.series import TimeSeries
from phaseslide.sliding import (SlidingCertificate, SlidingConstants, certificate,
                                comparison_w, compute_constants, default_delta_slide,
                                detect_reaching, estimate_chat, verify_envelope)

GRID = build_grid(1, [32], [1.0])


def constants(M=1.0, M0=0.5, M_pi_star=1.5):
    return SlidingConstants(M, M0, M_pi_star, 0.0, 0.0, 0.0, np.zeros(1))


def series_of(devs, mu=None, dt=0.1):
    s = TimeSeries()
    for i, d in enumerate(devs):
        s.append(step=i, t=i * dt, sup_dev=d, l2_dev=d, mu_inf=0.0 if mu is None else mu[i],
                 sigma_min=0.0, sigma_max=0.0, energy=0.0, newton_iters=0,
                 w_bound=np.nan, max_principle_margin=0.0)
    return s


def full(v):
    return np.full(GRID.shape, float(v))


# -- constants -------------------------------------------------------------

def test_constants_vanish_for_uniform_interior_target():
    c = compute_constants(full(0.5), full(-0.9), BoundaryData.constant_value(0.0),
                          pt.obstacle(1.0), GRID)
    assert c.M == 0.0
    assert c.M0 == pytest.approx(1.4)


def test_target_on_domain_boundary_is_rejected():
    with pytest.raises(pt.DomainError):
        compute_constants(full(0.0), full(-1.0), 0.0, pt.obstacle(1.0), GRID)


def test_pi_sup_attained_at_endpoint():
    # pi(r) = -r: max(|-(-0.5 + 0.5)|, |-(-0.5 - 0.5)|) = 1
    c = compute_constants(full(0.0), full(-0.5), 0.0, pt.regular(), GRID)
    assert c.M0 == 0.5
    assert c.M_pi_star == 1.0


def test_pi_sup_sampled_fallback_is_conservative():
    from phaseslide.sliding import _sup_pi_shifted
    pot = pt.logarithmic(2.0)
    exact = _sup_pi_shifted(pot, full(-0.3), 0.4, exact=True)
    sampled = _sup_pi_shifted(pot, full(-0.3), 0.4, exact=False)
    assert exact <= sampled <= exact + pot.lipschitz_pi * 0.8 / 100 + 1e-15


def test_constants_count_target_laplacian_and_boundary_data():
    (x,) = GRID.coordinates()
    ps = -0.5 + 0.1 * np.cos(np.pi * x)
    c = compute_constants(ps, ps, BoundaryData.constant_value(-0.25), pt.obstacle(1.0), GRID)
    assert c.M0 == 0.0
    assert c.mu_gamma_sup == 0.25
    assert c.laplacian_phi_star_sup == pytest.approx(0.1 * np.pi ** 2, rel=1e-2)
    assert c.M == pytest.approx(0.25 + c.laplacian_phi_star_sup)


# -- certificate arithmetic --------------------------------------------------

def test_system_constant():
    cert = certificate(constants(), 1.0, 0.0, 4.0, 1.0, 1.0, 10.0)
    assert cert.C_sys == 0.5


def test_threshold_and_reaching_time_examples():
    # C_sh = 0.25, |Omega| = 1, tau = 1 gives C_sys = 0.5
    cert = certificate(constants(1.0, 0.5, 1.5), 0.25, 0.0, 1.0, 1.0, 1.0, 10.0)
    assert cert.C_sys == 0.5
    # (0 + 1 + 1.5 + 0.5) / 0.5
    assert cert.rho_star == pytest.approx(6.0, rel=1e-15)
    # 0.5 * 10 + 0 + 1 + 1.5
    assert cert.A_rho == pytest.approx(7.5, rel=1e-15)
    # 1 * 0.5 / (10 - 7.5)
    assert cert.T_star == pytest.approx(0.2, rel=1e-14)


def test_no_reaching_time_below_threshold():
    cert = certificate(constants(1.0, 0.5, 1.5), 0.25, 0.0, 1.0, 1.0, 1.0, 5.0)
    assert cert.rho_star == pytest.approx(6.0)
    assert cert.T_star is None
    with pytest.raises(ValueError):
        comparison_w(cert, 0.0)


def test_smallness_violation_is_flagged():
    cert = certificate(constants(), 3.0, 0.0, 4.0, 1.0, 1.0, 100.0)
    assert not cert.smallness_ok
    assert cert.rho_star is None and cert.T_star is None
    assert "smallness_condition = violated" in cert.to_text()


def test_certificate_rejects_bad_inputs():
    with pytest.raises(ValueError):
        certificate(constants(), 1.0, 0.0, 0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        certificate(constants(), 1.0, 0.0, 1.0, 1.0, 1.0, 0.0)


def test_certificate_text_round_trip():
    cert = certificate(constants(0.3, 1.8, 5.4), 1.0, 0.125, 4.0, 1.0, 1.0, 31.5,
                       C_hat_source="empirical-from-pilot")
    back = SlidingCertificate.from_text(cert.to_text())
    assert back == cert
    none = certificate(constants(), 3.0, 0.0, 4.0, 1.0, 1.0, 100.0)
    assert SlidingCertificate.from_text(none.to_text()) == none


certificate_inputs = st.tuples(
    st.floats(0, 5), st.floats(0.01, 2), st.floats(0, 5),   # M, M0, M_pi*
    st.floats(0, 0.99), st.floats(0.5, 8), st.floats(0.2, 2), st.floats(0.1, 2),
    st.floats(0, 3), st.floats(1e-3, 10))


def _build(args, rho_shift=0.0):
    M, M0, Mp, frac, tau, meas, T, C_hat, gap = args
    C_sh = frac * tau / (2 * meas ** (2 / 3))
    probe = certificate(constants(M, M0, Mp), C_sh, C_hat, tau, T, meas, 1.0)
    return certificate(constants(M, M0, Mp), C_sh, C_hat, tau, T, meas,
                       probe.rho_star * (1 + gap) + rho_shift)


@settings(max_examples=200, deadline=None)
@given(certificate_inputs)
def test_gain_above_threshold_dominates(args):
    cert = _build(args)
    assume(cert.T_star is not None)
    assert cert.A_rho + cert.tau / cert.T * cert.M0 < cert.rho * (1 + 1e-12)
    assert 0 <= cert.T_star <= cert.T * (1 + 1e-12)


@settings(max_examples=200, deadline=None)
@given(certificate_inputs, st.floats(1e-3, 100))
def test_reaching_time_decreases_with_gain(args, extra):
    a = _build(args)
    b = _build(args, rho_shift=extra * a.rho)
    assume(a.T_star is not None and b.T_star is not None and a.T_star > 0)
    assert b.T_star < a.T_star


# -- comparison envelope ---------------------------------------------------------

def _unit_cert():
    # M0 = 1, tau = 1, rho = 2, A = 1: C_sys = 0, M + M_pi* = 1
    return certificate(constants(0.5, 1.0, 0.5), 0.0, 0.0, 1.0, 2.0, 1.0, 2.0)


def test_closed_form_envelope():
    cert = _unit_cert()
    assert cert.A_rho == 1.0 and cert.T_star == 1.0
    t = np.array([0.0, 0.25, 0.5, 1.0, 1.5])
    assert np.allclose(comparison_w(cert, t), np.maximum(0.0, 1.0 - t), rtol=0, atol=1e-15)
    assert comparison_w(cert, 0.0) == cert.M0
    assert comparison_w(cert, cert.T_star) == 0.0


@settings(max_examples=100, deadline=None)
@given(certificate_inputs)
def test_envelope_monotone_lipschitz_and_solves_inclusion(args):
    cert = _build(args)
    assume(cert.T_star is not None)
    t = np.linspace(0, cert.T, 257)
    w = comparison_w(cert, t)
    L = cert.slope
    assert np.all(np.diff(w) <= 0)
    assert np.all(np.abs(np.diff(w)) <= L * np.diff(t) * (1 + 1e-9) + 1e-15)
    before = t < cert.T_star * (1 - 1e-9)
    # tau w' + rho * 1 = A on the way down
    if np.count_nonzero(before) > 1:
        dw = np.diff(w[before]) / np.diff(t[before])
        assert np.allclose(cert.tau * dw + cert.rho, cert.A_rho, rtol=1e-9,
                           atol=1e-9 * cert.rho)
    # after reaching, the selection A/rho lies in sign(0) = [-1, 1]
    assert 0 <= cert.A_rho / cert.rho < 1
    assert np.all(w[t >= cert.T_star] == 0)


def _integrate_inclusion(tau, rho, A, M0, T, n):
    """Implicit Euler for tau w' + rho sign(w) ∋ A via the resolvent of sign."""
    dt = T / n
    w = np.empty(n + 1)
    w[0] = M0
    k = dt * rho / tau
    for i in range(n):
        v = w[i] + dt * A / tau
        w[i + 1] = np.sign(v) * max(abs(v) - k, 0.0)
    return np.linspace(0, T, n + 1), w


@pytest.mark.parametrize("n", [7, 200, 801])
def test_envelope_matches_inclusion_integrator(n):
    # the envelope is piecewise linear with a kink at T*, so implicit Euler
    # with the sign resolvent reproduces it up to rounding on any grid
    cert = certificate(constants(1.0, 0.5, 1.5), 0.25, 0.0, 1.0, 1.0, 1.0, 10.0)
    t, w = _integrate_inclusion(cert.tau, cert.rho, cert.A_rho, cert.M0, cert.T, n)
    assert np.max(np.abs(w - comparison_w(cert, t))) <= cert.slope * cert.T / n
    assert np.max(np.abs(w - comparison_w(cert, t))) <= 1e-12


# -- reaching detection ---------------------------------------------------------

def test_reaching_on_target_from_start():
    assert detect_reaching(series_of([0.0] * 5), 1e-3) == 0.0


def test_reaching_requires_persistence():
    assert detect_reaching(series_of([1.0, 1e-4, 0.5, 0.4]), 1e-3) is None


def test_reaching_time_is_start_of_final_stay():
    s = series_of([1.0, 1e-4, 0.5, 1e-4, 1e-5, 0.0])
    assert detect_reaching(s, 1e-3) == pytest.approx(0.3)


def test_reaching_threshold_must_be_positive():
    with pytest.raises(ValueError):
        detect_reaching(series_of([0.0]), 0.0)


def test_default_threshold_is_max_of_relative_and_layer_width():
    assert default_delta_slide(1.8, 0.05) == 0.05
    assert default_delta_slide(100.0, 0.05) == pytest.approx(0.1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=1, max_size=30), st.floats(1e-3, 1))
def test_reached_series_stays_in_band(devs, delta):
    t = detect_reaching(series_of(devs), delta)
    arr = np.array(devs)
    if t is None:
        assert arr[-1] > delta
    else:
        i = int(round(t / 0.1))
        assert np.all(arr[i:] <= delta)
        assert i == 0 or arr[i - 1] > delta


# -- envelope verification -----------------------------------------------------

def test_envelope_passes_on_target():
    cert = _unit_cert()
    assert verify_envelope(series_of([0.0] * 11), cert, 1e-2).passed


def test_envelope_fails_above_initial_bound():
    cert = _unit_cert()
    report = verify_envelope(series_of([1.5, 0.5, 0.0]), cert, 1e-2)
    assert not report.passed
    assert report.violations[0][0] == 0


def test_envelope_tolerance_is_respected():
    cert = _unit_cert()
    devs = np.maximum(0.0, 1.0 - 0.1 * np.arange(11)) + 0.009
    assert verify_envelope(series_of(devs), cert, 1e-2).passed
    assert not verify_envelope(series_of(devs + 0.002), cert, 1e-2).passed


# -- empirical C_hat ------------------------------------------------------------

def test_chat_zero_for_vanishing_potential():
    assert estimate_chat(series_of([1.0, 0.5], mu=[0.0, 0.0]), 0.5, 10.0) == 0.0


def test_chat_is_largest_excess():
    s = series_of([1, 1, 1], mu=[3.0, 7.5, 6.0])
    assert estimate_chat(s, 0.5, 10.0) == 2.5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=20), st.floats(0, 0.99),
       st.floats(0.1, 100))
def test_pilot_satisfies_its_own_bound(mu, C_sys, rho):
    s = series_of([0.0] * len(mu), mu=mu)
    C_hat = estimate_chat(s, C_sys, rho)
    assert C_hat >= 0
    assert max(mu) <= C_sys * rho + C_hat + 1e-12 * (1 + max(mu))
