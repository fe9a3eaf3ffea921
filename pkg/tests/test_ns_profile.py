import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinslab.ns_profile import (NSProfile, ProfileError, SlipCoefficients, check_jump_conditions, export_csv,
                                jacobian, residuals, solve_algebraic, zero_eps_constants)


def test_zero_eps_closed_form():
    p = solve_algebraic(1.0, 4.0, 0.0)
    assert abs(p.D1 - 7) < 1e-12 and abs(p.D2 - 1) < 1e-12 and abs(p.P0 - 7 / 3) < 1e-12
    x = np.linspace(0, 1, 11)
    assert np.allclose(p.theta(x), (7 * x + 1) ** (2 / 3), rtol=1e-14)
    assert abs(p.total_mass() - 1) < 1e-14


def test_mass_from_antiderivative_matches_quadrature():
    p = solve_algebraic(1.0, 1.5, 0.05, 0.3)
    x = np.linspace(0, 1, 20001)
    rho = p.rho(x)
    trap = np.sum(0.5 * (rho[1:] + rho[:-1]) * np.diff(x))
    assert abs(trap - 1) < 1e-8


def test_equal_walls_uniform():
    p = solve_algebraic(1.3, 1.3, 0.1, 0.4)
    assert p.D1 == 0 and np.isclose(float(p.theta(0.3)), 1.3)
    assert np.isclose(p.total_mass(), 1.0)


@pytest.mark.parametrize("eps", [0.01, 0.05, 0.1])
@pytest.mark.parametrize("theta1", [1.1, 1.5])
def test_jump_conditions_hold(eps, theta1):
    p = solve_algebraic(1.0, theta1, eps, 0.3)
    assert p.iterations <= 15
    assert max(abs(r) for r in p.residuals) <= 1e-12
    assert max(check_jump_conditions(p)) <= 1e-12


def test_jump_sign_structure():
    p = solve_algebraic(1.0, 1.5, 0.05, 0.3)
    assert float(p.theta(0.0)) > 1.0      # gas hotter than the cold wall
    assert float(p.theta(1.0)) < 1.5      # and colder than the hot one


def test_jacobian_matches_finite_differences():
    eps, cb = 0.07, 0.35
    z = np.array(zero_eps_constants(1.0, 1.4))
    J = jacobian(eps, cb, *z)
    h = 1e-7
    for k in range(3):
        dz = np.zeros(3)
        dz[k] = h
        fd = (residuals(eps, cb, *(z + dz), 1.0, 1.4) - residuals(eps, cb, *(z - dz), 1.0, 1.4)) / (2 * h)
        assert np.allclose(J[:, k], fd, rtol=1e-6, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(t0=st.floats(0.5, 2.0), ratio=st.floats(1.01, 3.0), eps=st.floats(0.0, 0.2))
def test_profile_is_monotone_with_unit_mass(t0, ratio, eps):
    p = solve_algebraic(t0, t0 * ratio, eps, 0.3)
    x = np.linspace(0, 1, 50)
    assert np.all(np.diff(p.theta(x)) > 0)
    assert abs(p.total_mass() - 1) < 1e-11
    assert float(p.theta(0)) >= t0 * (1 - 1e-14) and float(p.theta(1)) <= t0 * ratio * (1 + 1e-14)


def test_derivatives_match_finite_differences():
    p = solve_algebraic(1.0, 1.5, 0.05, 0.3)
    x, h = 0.4, 1e-5
    fd1 = (p.theta(x + h) - p.theta(x - h)) / (2 * h)
    fd2 = (p.theta(x + h) - 2 * p.theta(x) + p.theta(x - h)) / h ** 2
    assert np.isclose(p.theta_derivative(x, 1), fd1, rtol=1e-8)
    assert np.isclose(p.theta_derivative(x, 2), fd2, rtol=1e-4)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        solve_algebraic(-1.0, 1.0)
    with pytest.raises(ValueError):
        solve_algebraic(1.0, 1.2, 0.5)
    with pytest.raises(ProfileError):
        NSProfile(1.0, -1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        SlipCoefficients(1.0, np.nan, 1.0, 1.0, 1.0)


def test_export_csv(tmp_path):
    p = solve_algebraic(1.0, 4.0, 0.0)
    path = export_csv(p, tmp_path / "ns.csv")
    rows = path.read_text().splitlines()
    assert rows[0] == "x,rho,theta,dtheta_dx"
    assert len(rows) == 102
    assert b"\r" not in path.read_bytes()
