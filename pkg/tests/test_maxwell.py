import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinslab.grid import build_velocity_grid
from kinslab.maxwell import (DistributionField, MacroState, WeightSpec, burnett, inner_M, macro_basis, maxwellian,
                             moments, project_PM, weight_w)

GRID = build_velocity_grid(16, 7.0)


def test_macro_state_validation():
    with pytest.raises(ValueError):
        MacroState(rho=0.0)
    with pytest.raises(ValueError):
        MacroState(rho=1.0, theta=-1.0)


def test_weight_spec_constraints():
    with pytest.raises(ValueError):
        WeightSpec(beta=3.0)
    with pytest.raises(ValueError):
        WeightSpec(varpi=0.2)
    assert np.isclose(weight_w(WeightSpec(4.0, 0.125), np.zeros(3)), 1.0)


@settings(max_examples=20, deadline=None)
@given(rho=st.floats(0.3, 3.0), u=st.floats(-0.5, 0.5), theta=st.floats(0.6, 1.6))
def test_maxwellian_moments(rho, u, theta):
    st_ = MacroState(rho, (u, 0.0, 0.0), theta)
    m = moments(maxwellian(st_, GRID), GRID)
    # spacing 0.875 against thermal width sqrt(0.6): aliasing floor near 1e-5
    assert np.isclose(m.mass, rho, rtol=2e-5)
    assert abs(m.momentum[0] - rho * u) < 2e-5 * rho
    assert np.isclose(m.energy, rho * (u * u + 3 * theta), rtol=1e-4)


def test_distribution_field_shape_check():
    from kinslab.grid import build_spatial_grid
    x = build_spatial_grid(5)
    with pytest.raises(ValueError):
        DistributionField(np.zeros((4, GRID.size)), x, GRID)


def test_projection_is_idempotent_and_self_adjoint(rng):
    st_ = MacroState(1.2, (0.1, 0.0, -0.05), 1.1)
    M = maxwellian(st_, GRID)
    f = M * rng.standard_normal(GRID.size)
    g = M * rng.standard_normal(GRID.size)
    Pf = project_PM(f, st_, GRID)
    assert np.allclose(project_PM(Pf, st_, GRID), Pf, atol=1e-12 * np.max(np.abs(Pf)))
    a = inner_M(Pf, g, M, GRID)
    b = inner_M(f, project_PM(g, st_, GRID), M, GRID)
    assert np.isclose(a, b, rtol=1e-9)


def test_macro_basis_orthonormal():
    st_ = MacroState(1.0, (0.0, 0.0, 0.0), 1.3)
    M, P = macro_basis(st_, GRID)
    G = (P * GRID.weights * M) @ P.T
    assert np.allclose(G, np.eye(5), atol=1e-12)


@pytest.mark.parametrize("kind", ["A1", "A2", "A3", "B"])
def test_burnett_functions_orthogonal_to_invariants(kind):
    v = GRID.nodes
    mu = maxwellian(MacroState(1.0), GRID)
    X = burnett(kind, v)
    inv = [np.ones(GRID.size), v[:, 0], v[:, 1], v[:, 2], np.sum(v * v, 1)]
    for p in inv:
        assert abs(GRID.integrate(X * p * mu)) < 1e-6


def test_burnett_unknown_kind():
    with pytest.raises(ValueError):
        burnett("C", np.zeros((1, 3)))
