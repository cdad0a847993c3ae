import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phaseslide import potentials as pt
from phaseslide.core import (InvalidDataError, ScalarField, TimeConfig, build_grid, inner,
                             l2_norm, sup_norm, validate_initial_data)


def test_build_grid_1d_spacing_and_measure():
    g = build_grid(1, [100], [1.0])
    assert g.spacing == (0.01,)
    assert g.measure == 1.0
    assert g.shape == (101,)


def test_build_grid_2d_measure():
    g = build_grid(2, [64, 64], [1.0, 2.0])
    assert g.measure == 2.0
    assert g.spacing[0] * g.cells[0] == g.extent[0]
    assert g.spacing[1] * g.cells[1] == g.extent[1]


@pytest.mark.parametrize("args", [(1, [100], [-1.0]), (3, [8, 8, 8], [1, 1, 1]),
                                  (1, [3], [1.0]), (2, [8], [1.0])])
def test_build_grid_rejects_bad_input(args):
    with pytest.raises(ValueError):
        build_grid(*args)


def test_build_grid_is_deterministic():
    assert build_grid(2, [8, 6], [1.0, 0.5]) == build_grid(2, [8, 6], [1.0, 0.5])


def test_weights_sum_to_measure():
    for g in (build_grid(1, [7], [2.5]), build_grid(2, [5, 9], [1.0, 3.0])):
        assert np.isclose(g.weights.sum(), g.measure, rtol=1e-14)


def test_boundary_and_interior_partition_nodes():
    g = build_grid(2, [4, 5], [1.0, 1.0])
    assert g.boundary_index.size == 2 * 5 + 2 * 6 - 4
    both = np.sort(np.concatenate([g.boundary_index, g.interior_index]))
    assert np.array_equal(both, np.arange(g.n_nodes))


def test_scalar_field_checks_size_and_finiteness():
    g = build_grid(1, [4], [1.0])
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros(4))
    with pytest.raises(ValueError):
        ScalarField(g, [0, 1, np.nan, 0, 0])


def test_sup_norm_examples():
    g = build_grid(1, [4], [1.0])
    assert sup_norm(ScalarField.constant(g, 0.0)) == 0.0
    assert sup_norm(ScalarField(g, [0, -3, 2, 0, 1])) == 3.0


def test_sup_norm_of_sampled_sine():
    # analytic maximum 1 at x = 0.5, which is a node for 100 cells
    g = build_grid(1, [100], [1.0])
    f = g.sample(lambda x: np.sin(np.pi * x))
    assert abs(sup_norm(f) - 1.0) <= g.spacing[0] ** 2


def test_l2_norm_zero_and_constant():
    g = build_grid(2, [6, 4], [1.0, 3.0])
    assert l2_norm(ScalarField.constant(g, 0.0)) == 0.0
    assert np.isclose(l2_norm(ScalarField.constant(g, -2.5)), 2.5 * np.sqrt(3.0), rtol=1e-14)


def test_l2_norm_of_sine_converges_to_analytic_value():
    # int_0^1 sin^2(pi x) dx = 1/2
    errs = []
    for n in (8, 16, 32, 64):
        g = build_grid(1, [n], [1.0])
        errs.append(abs(l2_norm(g.sample(lambda x: np.sin(np.pi * x))) - 1 / np.sqrt(2)))
    assert errs[-1] < 1e-12 or all(a >= b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-6


def test_inner_matches_squared_norm():
    g = build_grid(2, [5, 5], [1.0, 1.0])
    f = g.sample(lambda x, y: x * y + 1)
    assert np.isclose(inner(g, f, f), l2_norm(f) ** 2)


_values = arrays(np.float64, 9, elements=st.floats(-1e3, 1e3))
# keep squares clear of underflow
_scales = st.one_of(st.just(0.0), st.floats(1e-100, 1e3), st.floats(-1e3, -1e-100))


@settings(max_examples=60, deadline=None)
@given(_values, _scales)
def test_norms_are_absolutely_homogeneous(v, c):
    g = build_grid(1, [8], [2.0])
    f = ScalarField(g, v)
    cf = ScalarField(g, c * v)
    assert np.isclose(sup_norm(cf), abs(c) * sup_norm(f), rtol=1e-12, atol=1e-300)
    assert np.isclose(l2_norm(cf), abs(c) * l2_norm(f), rtol=1e-12, atol=1e-300)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 30, elements=st.floats(-1e3, 1e3)))
def test_discrete_hoelder_inequality(v):
    g = build_grid(2, [4, 5], [1.5, 0.5])
    f = ScalarField(g, v)
    assert l2_norm(f) <= sup_norm(f) * np.sqrt(g.measure) * (1 + 1e-14)


def test_time_config():
    tc = TimeConfig(1.0, 1e-3)
    assert tc.steps == 1000
    assert tc.times()[-1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        TimeConfig(1.0, 0.3)
    with pytest.raises(ValueError):
        TimeConfig(-1.0, 0.1)


def _fields(g, phi0, sigma0, phi_star):
    return (ScalarField.constant(g, phi0), ScalarField.constant(g, sigma0),
            ScalarField.constant(g, phi_star))


def test_validation_accepts_interior_data():
    g = build_grid(1, [8], [1.0])
    assert validate_initial_data(*_fields(g, 0.5, 0.5, -0.9), pt.obstacle()).ok


def test_validation_rejects_target_on_obstacle_boundary():
    g = build_grid(1, [8], [1.0])
    rep = validate_initial_data(*_fields(g, 0.5, 0.5, 1.0), pt.obstacle())
    assert not rep.ok
    assert {v[0] for v in rep.violations} == {"phi_star"}
    assert len(rep.violations) == g.n_nodes
    with pytest.raises(InvalidDataError):
        rep.raise_if_invalid()


def test_validation_rejects_log_singularity_and_lists_nodes():
    g = build_grid(1, [8], [1.0])
    phi0 = np.zeros(g.shape)
    phi0[3] = 1.0
    rep = validate_initial_data(phi0, np.zeros(g.shape), np.zeros(g.shape), pt.logarithmic())
    assert [(v[0], v[1], v[2]) for v in rep.violations] == [("phi0", 3, 1.0)]


def test_validation_obstacle_allows_closed_interval_for_phi0():
    g = build_grid(1, [8], [1.0])
    assert validate_initial_data(*_fields(g, 1.0, 0.0, 0.0), pt.obstacle()).ok
    assert not validate_initial_data(*_fields(g, 1.0 + 1e-9, 0.0, 0.0), pt.obstacle()).ok
