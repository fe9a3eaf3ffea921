import numpy as np
import pytest
from scipy.integrate import quad

from kinslab.collision import (CollisionIntegral, Envelope, LinearizedOperator, InversionError, collision_frequency,
                               collision_frequency_speed, compute_alpha_beta, kernel_bounds, maxwellian_sqrt,
                               mean_free_path, read_kernel_cache, transport_coefficients, write_kernel_cache)
from kinslab.expansion import unit_maxwellian
from kinslab.grid import Sector, build_velocity_grid


def _nu_oracle(s):
    # 2 pi int |v - u| mu(u) du in spherical coordinates around v
    def radial(r):
        if s == 0:
            inner = 2 * r
        else:
            inner = ((r + s) ** 3 - abs(r - s) ** 3) / (3 * r * s)
        return 2 * np.pi * r * r * inner * np.exp(-r * r / 2) / (2 * np.pi) ** 1.5
    return 2 * np.pi * quad(radial, 0, 20, limit=200)[0]


@pytest.mark.parametrize("s", [0.0, 1e-7, 0.3, 1.0, 2.5, 6.0])
def test_collision_frequency_closed_form(s):
    assert np.isclose(collision_frequency_speed(s), _nu_oracle(s), rtol=1e-9)


def test_collision_frequency_vector_form():
    v = np.array([[0.3, -0.4, 1.2]])
    assert np.isclose(collision_frequency(v)[0], collision_frequency_speed(np.linalg.norm(v)))


def test_mean_free_path_oracle():
    num = quad(lambda s: s * 4 * np.pi * s * s * np.exp(-s * s / 2), 0, 20)[0]
    den = quad(lambda s: _nu_oracle(s) * 4 * np.pi * s * s * np.exp(-s * s / 2), 0, 12, limit=200)[0]
    assert np.isclose(mean_free_path(), num / den, rtol=1e-7)


@pytest.fixture(scope="module")
def L8(grid8):
    return LinearizedOperator(grid8, "full")


def test_invariants_in_kernel(L8):
    r = L8.apply(L8.invariants)
    assert np.max(np.abs(r)) < 1e-10 * np.max(np.abs(L8.matrix))


def test_self_adjoint(L8, rng):
    f, g = rng.standard_normal((2, L8.size))
    a, b = L8.inner(L8.apply(f), g), L8.inner(f, L8.apply(g))
    assert abs(a - b) < 1e-10 * (abs(a) + abs(b))


def test_nonnegative_on_complement(L8, rng):
    f = rng.standard_normal((20, L8.size))
    f = f - L8.project_kernel(f)
    q = np.einsum("ij,ij->i", L8.apply(f), f * L8.sector.weights)
    assert np.all(q > 0)


def test_invert_roundtrip(L8, rng):
    g = rng.standard_normal(L8.size) * maxwellian_sqrt(L8.sector.nodes)
    g = g - L8.project_kernel(g)
    f = L8.invert(g)
    assert np.allclose(L8.apply(f), g, atol=1e-9 * np.max(np.abs(g)))
    with pytest.raises(InversionError):
        L8.invert(L8.invariants[0])


def test_sector_operator_matches_full(grid8, rng):
    s = Sector(grid8, "axisym")
    La = LinearizedOperator(grid8, s)
    Lf = LinearizedOperator(grid8, "full")
    h = rng.standard_normal(s.size)
    assert np.allclose(Lf.apply(s.expand(h))[s.reps], La.apply(h), atol=1e-10)


def test_kernel_cache_roundtrip(tmp_path, grid8, rng):
    m = rng.standard_normal((3, 4))
    path = tmp_path / "k.bin"
    write_kernel_cache(path, grid8, "axisym", 1.1, "consistent", m)
    meta, back = read_kernel_cache(path)
    assert np.array_equal(back, m) and meta["N"] == 8 and meta["theta"] == 1.1


@pytest.fixture(scope="module")
def Q8(grid8):
    return CollisionIntegral(grid8, 4, 8)


def test_Q_of_maxwellian_vanishes(Q8, grid8):
    M = unit_maxwellian(grid8.nodes, 1.0)
    assert np.max(np.abs(Q8(M, M))) < 1e-3 * np.max(collision_frequency(grid8.nodes) * M)


def test_Q_conserves_invariants(Q8, grid8, rng):
    M = unit_maxwellian(grid8.nodes, 1.0)
    v = grid8.nodes
    basis = np.vstack([np.ones(grid8.size), v.T, np.sum(v * v, 1)])
    for _ in range(5):
        F = M * (1 + 0.3 * np.tanh(rng.standard_normal(grid8.size)))
        q = Q8(F, F) * grid8.weights
        assert np.max(np.abs(basis @ q)) <= 1e-6 * np.max(np.abs(basis) @ np.abs(q))


def test_symmetric_paths_agree(Q8, grid8, rng):
    s = Sector(grid8, "axisym")
    M = unit_maxwellian(grid8.nodes, 1.0)
    a = s.project(M * rng.standard_normal(grid8.size))
    b = s.project(M * (1 + 0.2 * rng.standard_normal(grid8.size)))
    env = Envelope(1.0)
    direct = Q8(a, b, sector=s, envelope=env) + Q8(b, a, sector=s, envelope=env)
    sym = Q8.symmetric(a, b, sector=s, envelope=env)
    many = Q8.symmetric_many(a[None], b[None], s, [env])[0]
    scale = np.max(np.abs(direct))
    assert np.max(np.abs(sym - direct)) < 1e-10 * scale
    assert np.max(np.abs(many - sym)) < 1e-10 * scale


def test_bilinear_matrix_matches_evaluation(Q8, grid8, rng):
    s = Sector(grid8, "axisym")
    M = unit_maxwellian(grid8.nodes, 1.0)
    A = s.project(M * (1 + 0.1 * rng.standard_normal(grid8.size)))
    f = s.symmetrize(M * rng.standard_normal(grid8.size))
    env = Envelope(1.0)
    R = Q8.bilinear_matrix(A, envelope=env, sector=s)
    direct = Q8.symmetric(A, s.expand(f), sector=s, envelope=env)
    assert np.allclose(R @ f, direct, atol=1e-10 * np.max(np.abs(direct)))


def test_linearization_two_routes():
    """-L_M f from the tabulated kernel against Q(M, f) + Q(f, M) by quadrature.

    The gap is velocity-discretization error: it must shrink under refinement."""
    gaps = []
    for N in (12, 16):
        g = build_velocity_grid(N, 6.0)
        s = Sector(g, "axisym")
        L = LinearizedOperator(g, s)
        Q = CollisionIntegral(g, 4, 8)
        v = s.nodes
        sq = maxwellian_sqrt(v)
        h = (v[:, 0] ** 2 - np.sum(v * v, 1) / 3) * sq
        M = unit_maxwellian(g.nodes, 1.0)
        lin = -L.apply(h) * sq
        quad_ = Q.symmetric(M, s.expand(h * sq), sector=s, envelope=Envelope(1.0))
        gaps.append(np.max(np.abs(lin - quad_)) / np.max(np.abs(lin)))
    assert gaps[0] < 0.1
    assert gaps[1] < 0.5 * gaps[0]


def test_alpha_beta_and_transport_coefficients(grid8):
    ab = compute_alpha_beta(grid8)
    tc = transport_coefficients(grid8, ab)
    assert tc.iota > 0 and tc.kappa > 0
    assert abs(tc.iota_table - tc.iota) < 0.05 * tc.iota
    assert np.isclose(tc.conductivity(4.0), 2 * tc.kappa)


def test_kernel_bounds_finite(grid8):
    kb = kernel_bounds(grid8)
    assert np.isfinite(kb.c_k1) and np.isfinite(kb.c_k2)
    assert 0 < kb.c_nu_lower <= kb.c_nu_upper
