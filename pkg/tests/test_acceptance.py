"""Acceptance criteria 1-10.  Each test prints one PASS/FAIL line (also echoed
in the terminal summary) and then asserts the criterion at its stated
tolerance.  Criteria 6, 8 and 9 share one N=16 eps sweep (about an hour on
one core)."""

import time

import numpy as np
import pytest

from kinslab.cli import RunConfig, run
from kinslab.collision import (CollisionIntegral, LinearizedOperator, coercivity_constant, collision_frequency,
                               compute_alpha_beta, fit_envelope, kernel_bounds)
from kinslab.diagnostics import (LAYER_ZONE, expansion_bounds, fit_slope, kinetic_metrics, temperature_jump_report)
from kinslab.expansion import HeatResponse, local_operators, unit_maxwellian
from kinslab.grid import Sector, SpatialGrid, build_velocity_grid
from kinslab.kinetic import LinearSlab, WallOperator, manufactured_data, solve_full
from kinslab.milne import MilneSolver, burnett_incoming, extract_slip_coefficients, half_space_grid
from kinslab.ns_profile import check_jump_conditions, solve_algebraic

pytestmark = pytest.mark.acceptance

SWEEP_EPS = (0.1, 0.05, 0.025)
SWEEP_N, SWEEP_V = 16, 6.5


def test_criterion_01_ns_closed_form(criterion):
    t = time.perf_counter()
    p = solve_algebraic(1.0, 4.0, 0.0)
    dt = time.perf_counter() - t
    err = max(abs(p.D1 - 7.0), abs(p.D2 - 1.0), abs(p.P0 - 7.0 / 3.0))
    mass = abs(p.total_mass() - 1.0)
    ok = err <= 1e-12 and mass <= 1e-12 and dt < 1e-3
    criterion(1, "NS closed form", ok, f"max|(D1,D2,P0) - (7,1,7/3)| = {err:.1e}, |mass - 1| = {mass:.1e}, "
                                      f"{dt * 1e3:.3f} ms")
    assert ok


def test_criterion_02_jump_conditions(criterion):
    c = 0.24  # representative jump coefficient (N=16 Milne value is ~0.238)
    eps = np.array([0.1, 0.05, 0.01])
    worst_it, worst_res, slopes = 0, 0.0, []
    for th1 in (1.1, 1.5):
        jumps = []
        for e in eps:
            p = solve_algebraic(1.0, th1, float(e), c)
            worst_it = max(worst_it, p.iterations)
            worst_res = max(worst_res, *check_jump_conditions(p))
            jumps.append(abs(float(p.theta(0.0)) - 1.0))
        slopes.append(fit_slope(eps, jumps)[0])
    ok = worst_it <= 15 and worst_res <= 1e-12 and all(abs(s - 1.0) <= 0.1 for s in slopes)
    criterion(2, "jump-condition residuals", ok, f"max iterations {worst_it}, max residual {worst_res:.1e}, "
                                                 f"jump slopes {slopes[0]:.3f}, {slopes[1]:.3f}")
    assert ok


def test_criterion_03_collision_battery(criterion):
    t = time.perf_counter()
    g24 = build_velocity_grid(24, 6.0)
    inv_used, inv_raw, sym = 0.0, 0.0, 0.0
    for name in ("axisym", "odd2", "odd3"):
        L = LinearizedOperator(g24, name)
        sw = np.sqrt(L.sector.weights)
        for mat, acc in ((L.matrix, "used"), (L.raw, "raw")):
            num = np.linalg.norm((L.invariants @ mat.T) * sw, axis=1)
            den = np.linalg.norm(sw[:, None] * mat / sw[None, :], 2) * np.linalg.norm(L.invariants * sw, axis=1)
            val = float(np.max(num / den))
            if acc == "used":
                inv_used = max(inv_used, val)
            else:
                inv_raw = max(inv_raw, val)
        S = sw[:, None] * L.matrix / sw[None, :]
        sym = max(sym, float(np.max(np.abs(S - S.T)) / np.max(np.abs(S))))
        del L, S
    kb = kernel_bounds(g24)
    c24 = coercivity_constant(g24)
    c32 = coercivity_constant(build_velocity_grid(32, 6.0))
    drift = abs(c32.c0 - c24.c0) / c24.c0
    finite = all(np.isfinite(v) and v > 0 for v in (kb.c_k1, kb.c_k2, kb.c_nu_lower, kb.c_nu_upper))
    dt = time.perf_counter() - t
    ok = inv_used <= 1e-6 and sym <= 1e-10 and c24.c0 > 0 and drift <= 0.1 and finite and dt < 600
    criterion(3, "collision-operator battery", ok,
              f"invariants {inv_used:.1e} (raw kernel {inv_raw:.1e}), self-adjoint {sym:.1e}, "
              f"c0 {c24.c0:.4f} -> {c32.c0:.4f} ({drift:.1%}), k1 {kb.c_k1:.3g}, k2 {kb.c_k2:.3g}, {dt:.0f} s")
    assert ok


def test_criterion_04_Q_sanity(criterion):
    t = time.perf_counter()
    g = build_velocity_grid(16, 6.5)
    Q = CollisionIntegral(g, 4, 8)
    M = unit_maxwellian(g.nodes, 1.0)
    qmm = float(np.max(np.abs(Q(M, M))) / np.max(collision_frequency(g.nodes) * M))
    s2 = np.sum(g.nodes ** 2, axis=1)
    basis = np.vstack([np.ones(g.size), g.nodes.T, s2])
    rng = np.random.default_rng(7)
    worst, worst_raw = 0.0, 0.0
    for _ in range(20):
        F = M * (1 + 0.3 * np.tanh(rng.standard_normal(g.size)))
        env = fit_envelope(F, F, g)
        raw = 0.5 * Q.symmetric(F, F, envelope=env, conservative=False)
        rows = np.arange(g.size)
        for q, acc in ((raw, "raw"), (Q._correct(raw, rows, None, env), "used")):
            qw = q * g.weights
            val = float(np.max(np.abs(basis @ qw) / (np.abs(basis) @ np.abs(qw))))
            if acc == "raw":
                worst_raw = max(worst_raw, val)
            else:
                worst = max(worst, val)
    dt = time.perf_counter() - t
    ok = qmm <= 1e-3 and worst <= 1e-6 and dt < 300
    criterion(4, "Q sanity", ok, f"|Q(M,M)| rel {qmm:.1e}, invariant moments of Q(F,F) {worst:.1e} "
                                 f"(before the conservative correction {worst_raw:.1e}), {dt:.0f} s")
    assert ok


def test_criterion_05_milne_battery(criterion):
    t = time.perf_counter()
    g = build_velocity_grid(16, 6.5)
    y = half_space_grid(20.0)
    ab = compute_alpha_beta(g)
    res = extract_slip_coefficients(g, 20.0, y, alpha_beta=ab)
    zero = MilneSolver(g, "axisym", 20.0, y).solve(np.zeros(g.size))
    zmax = float(np.max(np.abs(zero.h)))
    flux = max(float(np.max(np.abs(s.flux))) for s in res.solutions.values())
    dB = res.solutions["B"].decay
    cbar = res.coefficients.c_bar
    agree = abs(cbar - res.c_bar_v3) / abs(cbar)
    # half-space grid with every cell split in two, heat-flux problem only
    op = ab.responses["B"][0]
    fine = MilneSolver(g, op.sector, 20.0, half_space_grid(20.0, refine=2), operator=op).solve(
        burnett_incoming(ab, "B"), normalized=True)
    cb2, cb2_fine = res.coefficients.c_beta2, fine.coords["energy"]
    stab = abs(cb2_fine - cb2) / abs(cb2)
    dt = time.perf_counter() - t
    ok = (zmax <= 1e-12 and flux <= 1e-8 and dB.r2 >= 0.99 and dB.sigma0 > 0 and agree <= 0.01 and stab <= 0.01
          and dt < 900)
    criterion(5, "Milne battery", ok, f"zero {zmax:.1e}, flux {flux:.1e}, decay R2 {dB.r2:.4f} sigma0 {dB.sigma0:.3g}, "
                                      f"c_bar v2/v3 {agree:.1e}, c_beta2 {cb2:.5f} -> {cb2_fine:.5f} ({stab:.1e}), "
                                      f"{dt:.0f} s")
    assert ok


def test_criterion_07_manufactured_solution(criterion):
    t = time.perf_counter()
    g = build_velocity_grid(12, 6.0)
    s = Sector(g, "axisym")
    errs = []
    for J in (10, 20, 40, 80):
        xn = np.linspace(0.0, 1.0, J + 1)
        th = 1.0 + 0.2 * xn
        ops, _ = local_operators(g, s, 1.0 / th, th)
        slab = LinearSlab(SpatialGrid(xn, "uniform", 1.0), s, ops, 0.05, WallOperator(s, 1.0, 1.2))
        Fs, gg, r0, r1, _ = manufactured_data(slab)
        F, _ = slab.solve(gg, r0, r1)
        errs.append(float(np.max(np.abs(F - Fs)) / np.max(np.abs(Fs))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    dt = time.perf_counter() - t
    ok = bool(np.all(np.abs(orders - 2.0) <= 0.3)) and dt < 1200
    criterion(7, "manufactured solution", ok, f"errors {', '.join(f'{e:.2e}' for e in errs)}, "
                                              f"orders {', '.join(f'{o:.2f}' for o in orders)}, {dt:.0f} s")
    assert ok


# -- shared eps sweep ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def sweep():
    t = time.perf_counter()
    g = build_velocity_grid(SWEEP_N, SWEEP_V)
    Q = CollisionIntegral(g, 4, 8)
    resp = HeatResponse(g, 1.0, 1.2, "axisym", collision=Q)
    out = {}
    for eps in SWEEP_EPS:
        r = solve_full(eps, 1.0, 1.2, g, 0.25, response=resp, collision=Q, tol=1e-9)
        b = r.bundle
        row = {"metrics": kinetic_metrics(r), "checks": dict(b.checks), "m_identity_target": b.m_eps / eps,
               "bounds": expansion_bounds(b), "iterations": r.report.iterations}
        if LAYER_ZONE * eps < 0.4:
            jr = temperature_jump_report(r.F, b.x, b.sector, eps, (1.0, 1.2), b.profile.P0,
                                         list(b.layers.coefficients))
            row["jump"] = jr
            row["P0"] = b.profile.P0
        out[eps] = row
        del r, b
    out["time"] = time.perf_counter() - t
    out["c_beta2_milne"] = extract_slip_coefficients(g, 20.0).coefficients.c_beta2
    return out


def _spread(vals):
    vals = np.abs(np.asarray(vals, dtype=float))
    return float(vals.max() / vals.min())


def test_criterion_06_expansion_battery(criterion, sweep):
    rows = [sweep[e] for e in SWEEP_EPS]
    b = [r["bounds"] for r in rows]
    c = [r["checks"] for r in rows]
    shapes = {
        "G": _spread([x["C_G"] for x in b]),
        "B0": _spread([x["B0_C"] for x in b]),
        "B1": _spread([x["B1_C"] for x in b]),
        "A_s_sup": _spread([x["A_s_sup"] for x in b]),
        "r": _spread([x["r_const"] for x in b]),
    }
    decay_ok = all(x[f"B{k}_sigma"] > 0 and x[f"B{k}_r2"] >= 0.98 for x in b for k in (0, 1))
    l2_slope = fit_slope(SWEEP_EPS, [x["A_s_L2"] for x in b])[0]
    m_slope = fit_slope(SWEEP_EPS, [x["m_eps"] for x in b])[0]
    macro = max(x["A_s_macro"] for x in c)
    f2flux = max(max(x["F2_mass_flux"], x["F2_momentum_flux"], x["F2_energy_flux"]) for x in c)
    mass_id = max(x["F2_mass_identity"] for x in c)
    ok = (max(shapes.values()) <= 2.0 and decay_ok and l2_slope >= 0.45 and m_slope >= 0.9 and macro <= 1e-6
          and f2flux <= 1e-8 and mass_id <= 1e-8)
    spread = ", ".join(f"{k} {v:.2f}" for k, v in shapes.items())
    criterion(6, "expansion battery", ok, f"constant spread (max/min) {spread}; A_s L2 slope {l2_slope:.3f}, "
                                          f"m slope {m_slope:.3f}, P_M A_s {macro:.1e}, F2 flux {f2flux:.1e}, "
                                          f"mass identity {mass_id:.1e}")
    assert ok


def test_criterion_08_end_to_end_order(criterion, sweep):
    rows = [sweep[e]["metrics"] for e in SWEEP_EPS]
    dist = [r["distance"] for r in rows]
    slope = fit_slope(SWEEP_EPS, dist)[0]
    keys = ("remainder_weighted_Linf", "remainder_Lp_macro", "remainder_L2_micro")
    growth = {k: max(r[k] for r in rows) / rows[0][k] for k in keys}
    bounded = all(np.isfinite(v) and v <= 2.0 for v in growth.values())
    ok = slope >= 1.2 and bounded and sweep["time"] < 7200
    criterion(8, "end-to-end order", ok, f"distances {', '.join(f'{d:.3e}' for d in dist)}, slope {slope:.3f}; "
                                         f"norm growth {', '.join(f'{v:.2f}' for v in growth.values())}; "
                                         f"{sweep['time'] / 60:.0f} min")
    assert ok


def test_criterion_09_temperature_jump(criterion, sweep):
    row = sweep[0.025]
    jr = row["jump"]
    err = max(jr.rel_error)
    cb = sweep["c_beta2_milne"]
    ref = [abs(r - cb * tw / row["P0"]) / (cb * tw / row["P0"]) for r, tw in zip(jr.ratio, (1.0, 1.2))]
    ok = err <= 0.15
    criterion(9, "temperature jump", ok, f"ratio {jr.ratio[0]:.4f}, {jr.ratio[1]:.4f} against "
                                         f"{jr.predicted[0]:.4f}, {jr.predicted[1]:.4f} (errors {jr.rel_error[0]:.1%}, "
                                         f"{jr.rel_error[1]:.1%}); single c_beta2 = {cb:.4f}: {ref[0]:.1%}, {ref[1]:.1%}")
    assert ok


def test_criterion_10_determinism(criterion, tmp_path):
    cfg = RunConfig().validate()
    a, b = tmp_path / "a", tmp_path / "b"
    codes = (run("verify", cfg, a), run("verify", cfg, b))
    same = all((a / n).read_bytes() == (b / n).read_bytes() for n in ("verify.csv", "manifest.json"))
    ok = same and codes == (0, 0)
    criterion(10, "determinism", ok, f"verify exit codes {codes}, byte-identical outputs {same}")
    assert ok
