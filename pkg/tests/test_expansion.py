import numpy as np
import pytest

from kinslab.expansion import (ExpansionError, build_expansion, diffuse_defect, solve_conduction_profile,
                               unit_maxwellian, wall_maxwellian)
from kinslab.grid import Sector
from kinslab.ns_profile import solve_algebraic


@pytest.fixture(scope="module")
def bundle(grid8):
    return build_expansion(grid8, 1.0, 1.2, 0.1)


def test_bundle_flux_invariants(bundle):
    c = bundle.checks
    assert c["F2_mass_flux"] < 1e-12
    assert c["F2_momentum_flux"] < 1e-12
    assert c["F2_energy_flux"] < 1e-10
    assert c["layer_mass_flux"] < 1e-10
    assert c["boundary_identity"] < 1e-12
    assert c["r_flux"] < 1e-8


def test_residual_is_microscopic(bundle):
    assert bundle.checks["A_s_macro"] < 1e-6


def test_F2_mass_cancels_layer_mass(bundle):
    # exact up to the quadrature error of the Maxwell modes (1e-2 at N=8)
    target = -bundle.m_eps / bundle.eps
    assert abs(bundle.checks["F2_mass_identity"]) < 0.2 * abs(target)


def test_shapes_and_incoming_support(bundle):
    J1, n = bundle.M.shape
    assert J1 == bundle.x.count
    for part in (bundle.G, bundle.B0, bundle.B1, bundle.F2, bundle.dF2):
        assert part.shape == (J1, n)
    assert bundle.A_s.shape == (J1 - 1, n)
    v1 = bundle.sector.nodes[:, 0]
    assert np.all(bundle.r0[v1 < 0] == 0.0)
    assert np.all(bundle.r1[v1 > 0] == 0.0)


def test_layers_decay_into_the_bulk(bundle):
    mid = bundle.x.count // 2
    size = np.max(np.abs(bundle.B0[0]))
    assert np.max(np.abs(bundle.B0[mid])) < 1e-6 * size
    assert np.max(np.abs(bundle.B1[mid])) < 1e-6 * np.max(np.abs(bundle.B1[-1]))


def test_equal_walls_give_pure_maxwellian(grid8):
    b = build_expansion(grid8, 1.1, 1.1, 0.1)
    for part in (b.G, b.B0, b.B1, b.F2, b.A_s):
        assert np.max(np.abs(part)) == 0.0
    assert np.max(np.abs(b.r0)) < 1e-14 and np.max(np.abs(b.r1)) < 1e-14
    assert b.m_eps == 0.0


def test_parameter_guards(grid8):
    with pytest.raises(ValueError):
        build_expansion(grid8, 1.0, 1.2, 0.1, alpha=0.5)
    with pytest.raises(ValueError):
        build_expansion(grid8, 1.0, 1.2, 0.3)
    with pytest.raises(ExpansionError):
        solve_conduction_profile(None, 1.0, 1.2, 0.1, 0.2, 0.2)


def test_heat_response_tables(bundle):
    r = bundle.profile.response
    assert r.interpolation_error() < 1e-8
    th = np.linspace(r.lo, r.hi, 7)
    assert np.all(r.q(th) > 0)
    # R_hat has unit heat flux at every temperature
    v = r.sector.nodes
    flux = r.sector.integrate(r.R_hat(th) * v[:, 0] * np.sum(v * v, 1))
    assert np.allclose(flux, 1.0, atol=1e-10)


def test_profile_constant_flux_and_mass(bundle):
    p = bundle.profile
    r = p.response
    x = np.linspace(0, 1, 21)
    th = p.theta(x)
    flux = r.q(th) * p.dtheta(x) / np.sqrt(th)
    assert np.ptp(flux) < 1e-12 * abs(flux[0])
    assert np.isclose(p.total_mass(), 1.0, atol=1e-12)
    assert max(abs(e) for e in p.jump_residuals()) < 1e-11
    assert np.allclose(p.rho(x) * r.S1(th), p.P0, rtol=1e-12)


def test_profile_near_closed_form(bundle):
    # the discrete conductivity is sqrt(theta) to within the grid's accuracy
    r = bundle.profile.response
    p = solve_conduction_profile(r, 1.0, 1.2, 0.0, 0.0, 0.0)
    ns = solve_algebraic(1.0, 1.2, 0.0)
    x = np.linspace(0, 1, 11)
    assert np.max(np.abs(p.theta(x) - ns.theta(x))) < 1e-2
    assert p.theta(0.0) == pytest.approx(1.0, abs=1e-12)
    assert p.theta(1.0) == pytest.approx(1.2, abs=1e-12)


def test_wall_maxwellian_flux_and_defect(grid8):
    s = Sector(grid8, "axisym")
    v1 = s.nodes[:, 0]
    for wall, sign in ((0, 1.0), (1, -1.0)):
        mu = wall_maxwellian(s, 1.3, wall)
        inc = (v1 > 0) if wall == 0 else (v1 < 0)
        assert np.isclose(float(s.integrate(np.where(inc, sign * v1 * mu, 0.0))), 1.0, rtol=1e-12)
        # any multiple of the wall Maxwellian satisfies the diffuse condition
        assert np.max(np.abs(diffuse_defect(2.5 * mu, s, mu, wall))) < 1e-14


def test_unit_maxwellian_broadcasts(grid8):
    M = unit_maxwellian(grid8.nodes, np.array([1.0, 2.0]))
    assert M.shape == (2, grid8.size)
