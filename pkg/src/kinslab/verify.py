"""Fast property battery behind ``kinslab verify``: deterministic checks on a
coarse velocity grid, random vectors drawn from the config seed."""

from __future__ import annotations

import numpy as np


def _rel(a, b):
    return float(a) / max(float(b), 1e-300)


def run_battery(cfg) -> list:
    """Rows (check, value, tolerance, passed)."""
    from .collision import CollisionIntegral, LinearizedOperator, collision_frequency, maxwellian_sqrt
    from .diagnostics import norm_triple
    from .expansion import local_operators, unit_maxwellian
    from .grid import Sector, SpatialGrid, build_velocity_grid
    from .kinetic import LinearSlab, WallOperator, apply_Pgamma, manufactured_data
    from .milne import MilneSolver
    from .ns_profile import check_jump_conditions, solve_algebraic

    rng = np.random.default_rng(cfg.seed)
    rows = []

    def add(name, value, tol, ok=None):
        value = float(value)
        rows.append((name, value, float(tol), bool(value <= tol) if ok is None else bool(ok)))

    p = solve_algebraic(1.0, 4.0, 0.0)
    add("ns_closed_form", max(abs(p.D1 - 7), abs(p.D2 - 1), abs(p.P0 - 7 / 3)), 1e-12)
    add("ns_mass", abs(p.total_mass() - 1.0), 1e-12)
    cb = cfg.c_beta2 if cfg.c_beta2 is not None else 0.2
    jr = solve_algebraic(1.0, 1.5, 0.05, cb)
    add("ns_jump_residual", max(check_jump_conditions(jr)), 1e-12)

    grid = build_velocity_grid(cfg.verify_N, 6.0)
    L = LinearizedOperator(grid, "full")
    inv = L.invariants
    Linv = L.apply(inv)
    add("L_invariants", _rel(np.max(np.abs(Linv)), np.max(np.abs(L.matrix)) * np.max(np.abs(inv))), 1e-10)
    f, g = rng.standard_normal((2, grid.size)) * maxwellian_sqrt(grid.nodes) ** 0.5
    lhs, rhs = L.inner(L.apply(f), g), L.inner(f, L.apply(g))
    add("L_self_adjoint", _rel(abs(lhs - rhs), abs(lhs) + abs(rhs)), 1e-10)

    Q = CollisionIntegral(grid, 4, 8)
    M = unit_maxwellian(grid.nodes, 1.0)
    add("Q_MM_relative", _rel(np.max(np.abs(Q(M, M))), np.max(collision_frequency(grid.nodes) * M)), 1e-3)
    s2 = np.sum(grid.nodes ** 2, axis=1)
    basis = np.vstack([np.ones(grid.size), grid.nodes.T, s2])
    worst = 0.0
    for _ in range(3):
        F = M * (1 + 0.2 * np.tanh(rng.standard_normal(grid.size)))
        q = Q(F, F)
        worst = max(worst, float(np.max(np.abs(basis @ (q * grid.weights)))
                                 / np.max(np.abs(basis) @ np.abs(q * grid.weights))))
    add("Q_conservation", worst, 1e-6)

    s = Sector(grid, "axisym")
    solver = MilneSolver(grid, s, Y=10.0)
    zero = solver.solve(np.zeros(s.size))
    add("milne_zero", np.max(np.abs(zero.h)), 1e-12)

    wall = WallOperator(s, 1.0, 1.3)
    add("wall_normalization", wall.normalization_error(), 1e-10)
    mu0 = wall.mu[0]
    trace = np.where(wall.incoming[0], 0.0, mu0)
    fixed = apply_Pgamma(trace, wall, 0)
    flux_mu = float(wall.outgoing_flux(mu0, 0))
    add("Pgamma_fixed_point", np.max(np.abs(fixed - np.where(wall.incoming[0], mu0 * flux_mu, 0))), 1e-14)
    tr = np.abs(rng.standard_normal(s.size)) * unit_maxwellian(s.nodes, 1.1)
    out_flux = float(wall.outgoing_flux(tr, 0))
    add("Pgamma_flux", abs(float(wall.incoming_flux(apply_Pgamma(tr, wall, 0), 0)) - out_flux) / out_flux, 1e-10)

    errs = []
    for J in (10, 20, 40):
        xn = np.linspace(0.0, 1.0, J + 1)
        th = 1.0 + 0.2 * xn
        ops, nu = local_operators(grid, s, 1.0 / th, th)
        slab = LinearSlab(SpatialGrid(xn, "uniform", 1.0), s, ops, 0.1, WallOperator(s, 1.0, 1.2))
        Fs, gg, r0, r1, mass = manufactured_data(slab)
        F, rep = slab.solve(gg, r0, r1)
        errs.append(float(np.max(np.abs(F - Fs))))
        if J == 40:
            add("linear_flux_drift", rep.flux_drift, 1e-8)
            add("linear_transport_residual", rep.transport_residual, 1e-10)
            Mx = unit_maxwellian(s.nodes, th) / th[:, None]
            x = slab.x
            a = norm_triple(F, Mx, x, s, cfg.weight(), cfg.p, nu)
            b = norm_triple(-2.5 * F, Mx, x, s, cfg.weight(), cfg.p, nu)
            hom = max(abs(bv - 2.5 * av) / max(av, 1e-300) for av, bv in zip(a.as_dict().values(), b.as_dict().values()))
            add("norm_homogeneity", hom, 1e-12)
            G = rng.standard_normal(F.shape) * Mx
            c = norm_triple(F + G, Mx, x, s, cfg.weight(), cfg.p, nu)
            d = norm_triple(G, Mx, x, s, cfg.weight(), cfg.p, nu)
            tri = max(cv - av - dv for av, cv, dv in zip(a.as_dict().values(), c.as_dict().values(),
                                                         d.as_dict().values()))
            add("norm_triangle", max(tri, 0.0), 1e-12)
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    add("mms_order", abs(float(np.min(slopes)) - 2.0), 0.3)
    return rows
