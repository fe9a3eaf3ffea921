"""Slab kinetic solver: the linear problem

    eps v1 dF/dx + L_M F = g,   F|in = P_gamma F + r,   int int F = 0,

and the remainder iteration around the Navier-Stokes plus Knudsen-layer
approximation.

The linear problem is discretized by the same box scheme as the layers and
solved directly.  Diffuse reflection at both walls makes the discrete system
singular (flux conservation in the interior plus zero net flux at one wall
implies it at the other), so the left wall is imposed as pure inflow and the
one homogeneous solution, with the wall Maxwellian as inflow, is added to
satisfy the normalization.  The left diffuse condition then holds because the
net flux of the particular solution vanishes at x = 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .collision import CollisionIntegral, Envelope, maxwellian_sqrt
from .diagnostics import NormTriple, norm_triple
from .expansion import (ALPHA_DEFAULT, ExpansionBundle, HeatResponse, build_expansion, unit_maxwellian,
                        wall_maxwellian)
from .grid import Sector, SpatialGrid, VelocityGrid
from .maxwell import WeightSpec, weight_w
from .slab import BoxSystem

PRE_TOL = 1e-8
FLUX_FLOOR = 1e-13


class KineticError(RuntimeError):
    pass


class PreconditionError(KineticError):
    pass


class DivergenceError(KineticError):
    pass


# -- walls ------------------------------------------------------------------------------


class WallOperator:
    """Diffuse reflection at x = 0 and x = 1 with flux-normalized wall
    Maxwellians on the sector nodes."""

    def __init__(self, sector: Sector, theta_w0: float, theta_w1: float):
        if not (theta_w0 > 0 and theta_w1 > 0):
            raise ValueError("wall temperatures must be positive")
        self.sector = sector
        self.theta = (float(theta_w0), float(theta_w1))
        self.mu = (wall_maxwellian(sector, theta_w0, 0), wall_maxwellian(sector, theta_w1, 1))
        v1 = sector.nodes[:, 0]
        self.incoming = (v1 > 0, v1 < 0)

    def outgoing_flux(self, F: np.ndarray, wall: int) -> np.ndarray:
        """int over the outgoing half of F |v1| dv (F may be (..., n))."""
        v1 = self.sector.nodes[:, 0]
        return self.sector.integrate(np.where(~self.incoming[wall], np.abs(v1) * F, 0.0))

    def incoming_flux(self, F: np.ndarray, wall: int) -> np.ndarray:
        v1 = self.sector.nodes[:, 0]
        return self.sector.integrate(np.where(self.incoming[wall], np.abs(v1) * F, 0.0))

    def normalization_error(self) -> float:
        return max(abs(float(self.incoming_flux(self.mu[w], w)) - 1.0) for w in (0, 1))


def apply_Pgamma(trace: np.ndarray, wall: WallOperator, side: int) -> np.ndarray:
    """Incoming data at wall ``side`` (zero on the outgoing half): the wall
    Maxwellian times the outgoing flux of ``trace``."""
    out = wall.outgoing_flux(trace, side)
    return np.where(wall.incoming[side], wall.mu[side] * np.asarray(out)[..., None], 0.0)


# -- linear slab problem ----------------------------------------------------------------


@dataclass
class SolveReport:
    iterations: int
    sweep_residual: float
    transport_residual: float
    flux_drift: float
    norms: NormTriple | None = None
    history: list = field(default_factory=list)
    boundary_residual: float = 0.0
    mass: float = 0.0


class LinearSlab:
    """Factorized box discretization of eps v1 d/dx + L_M with diffuse walls.

    ``operators`` are the local L_M as matrices on F/sqrt(mu_ref) (one per
    node), ``mu_ref`` the unit Maxwellian at ``theta_ref``.  Fields in and out
    are F-values on the sector representatives.
    """

    def __init__(self, x: SpatialGrid, sector: Sector, operators, eps: float, wall: WallOperator,
                 theta_ref: float = 1.0):
        self.x = x
        self.sector = sector
        self.eps = float(eps)
        self.wall = wall
        self.sq = maxwellian_sqrt(sector.nodes, theta_ref)
        s = sector
        v1 = s.nodes[:, 0]
        self.v1 = v1
        self.operators = operators
        minus = np.flatnonzero(v1 < 0)
        out1 = v1 > 0
        c = np.where(out1, np.abs(v1) * s.signed_weights * self.sq, 0.0)
        right = (wall.mu[1][minus] / self.sq[minus])[:, None] * c[None, :]
        self.box = BoxSystem(x.nodes, v1, [A / self.eps for A in operators], left=None, right=right)
        plus = self.box.plus
        self.h_null = self.box.solve(left_data=wall.mu[0][plus] / self.sq[plus])
        self._mass_null = self._mass(self.h_null)
        if abs(self._mass_null) < 1e-300:
            raise KineticError("homogeneous solution has zero mass")

    def _mass(self, h) -> float:
        return float(self.x.integrate(self.sector.integrate(h * self.sq)))

    def check_data(self, g_cells, r0, r1):
        """Measured violations of int g dv = 0 (per cell) and of the zero flux
        of r at both walls (relative)."""
        s, v1 = self.sector, self.v1
        gi = np.abs(s.integrate(g_cells))
        gs = s.integrate(np.abs(g_cells))
        gscale = max(float(np.max(gs)), 1e-300)
        rf = [abs(float(s.integrate(v1 * r))) for r in (r0, r1)]
        # the wall Maxwellians carry unit flux, so net fluxes below FLUX_FLOOR
        # are roundoff from cancelling P_gamma terms
        rs = max(float(s.integrate(np.abs(v1 * r0))), float(s.integrate(np.abs(v1 * r1))), 1e-300)
        rf = max(0.0, max(rf) - FLUX_FLOOR)
        return float(np.max(gi)) / gscale, rf / rs

    def solve(self, g, r0=None, r1=None, check: bool = True, cells: bool | None = None):
        """F_R with eps v1 F' + L_M F = g, F|in = P_gamma F + r, zero total mass.

        ``g`` is given per cell (J, n) or per node (J+1, n; averaged to the
        cells); r0, r1 on the incoming halves (other entries ignored)."""
        s, J = self.sector, self.x.count - 1
        g = np.asarray(g, dtype=float)
        if cells is None:
            cells = g.shape[0] == J
        gc = g if cells else 0.5 * (g[1:] + g[:-1])
        n = s.size
        r0 = np.zeros(n) if r0 is None else np.where(self.wall.incoming[0], r0, 0.0)
        r1 = np.zeros(n) if r1 is None else np.where(self.wall.incoming[1], r1, 0.0)
        if check:
            gv, rv = self.check_data(gc, r0, r1)
            if gv > PRE_TOL and np.max(np.abs(gc)) > 0:
                raise PreconditionError(f"int g dv = 0 violated: {gv:.3e} (relative)")
            if rv > PRE_TOL and max(np.max(np.abs(r0)), np.max(np.abs(r1))) > 0:
                raise PreconditionError(f"boundary data carry net flux: {rv:.3e} (relative)")
        P, N = self.box.plus, self.box.minus
        sq = self.sq
        h = self.box.solve(cell_source=gc / sq / self.eps, left_data=r0[P] / sq[P], right_data=r1[N] / sq[N])
        h = h - (self._mass(h) / self._mass_null) * self.h_null
        F = h * sq
        rep = self.report(F, gc, r0, r1)
        return F, rep

    def residuals(self, F, g_cells, r0, r1):
        """(interior, boundary) residuals of the full discrete equations, the
        left diffuse condition included, relative to the data size."""
        sq = self.sq
        h = F / sq
        d = np.diff(self.x.nodes)[:, None]
        Ah = np.stack([A @ hj for A, hj in zip(self.operators, h)])
        cell = self.eps * self.v1 * (h[1:] - h[:-1]) / d + 0.5 * (Ah[1:] + Ah[:-1]) - g_cells / sq
        P, N = self.box.plus, self.box.minus
        interior = np.concatenate([cell[:, P].ravel(), cell[:, N].ravel()])
        b0 = F[0] - apply_Pgamma(F[0], self.wall, 0) - r0
        b1 = F[-1] - apply_Pgamma(F[-1], self.wall, 1) - r1
        scale = max(float(np.max(np.abs(g_cells / sq))), float(np.max(np.abs(Ah))), 1e-300)
        bscale = max(float(np.max(np.abs(F[[0, -1]] / sq))), 1e-300)
        bres = max(float(np.max(np.abs(b0[P] / sq[P]))), float(np.max(np.abs(b1[N] / sq[N]))))
        return float(np.max(np.abs(interior))) / scale, bres / bscale

    def report(self, F, g_cells, r0, r1) -> SolveReport:
        s = self.sector
        ti, tb = self.residuals(F, g_cells, r0, r1)
        flux = np.abs(s.integrate(self.v1 * F))
        scale = max(float(np.max(s.integrate(np.abs(self.v1 * F)))), 1e-300)
        return SolveReport(1, 0.0, ti, float(np.max(flux)) / scale, boundary_residual=tb,
                           mass=float(self.x.integrate(s.integrate(F))))


def solve_linear(eps: float, g, r0, r1, x: SpatialGrid, sector: Sector, operators, wall: WallOperator,
                 spec: WeightSpec | None = None, p: float = 4.0, M=None, nu=None):
    """One-shot wrapper around LinearSlab; the norm triple is attached when
    the local Maxwellians ``M`` are given."""
    slab = LinearSlab(x, sector, operators, eps, wall)
    F, rep = slab.solve(g, r0, r1)
    if M is not None:
        rep.norms = norm_triple(F, M, x, sector, spec or WeightSpec(), p, nu)
    return F, rep


# -- manufactured solution ------------------------------------------------------------------


def manufactured_solution(x_nodes: np.ndarray, sector: Sector, theta_ref: float = 1.0):
    """Smooth F*(x, v) with zero mass and zero normal flux at every x, and its x
    derivative; both (J+1, n) F-values."""
    v = sector.nodes
    mu = unit_maxwellian(v, theta_ref)
    s2 = np.sum(v * v, axis=1) / theta_ref
    v1 = v[:, 0] / np.sqrt(theta_ref)
    phi1 = (s2 - 3.0) * mu
    phi2 = (v1 * v1 - 1.0) * mu
    psi = v1 * (s2 - 5.0) * mu
    # remove the small grid defects so the constraints hold exactly
    for f, cons in ((phi1, [np.ones_like(v1)]), (phi2, [np.ones_like(v1)]), (psi, [v1])):
        for c in cons:
            f -= sector.integrate(f * c) / sector.integrate(mu * c * c) * mu * c
    xs = np.asarray(x_nodes, dtype=float)[:, None]
    F = np.sin(np.pi * xs) * phi1 + np.cos(2.0 * xs) * phi2 + xs * xs * psi
    dF = np.pi * np.cos(np.pi * xs) * phi1 - 2.0 * np.sin(2.0 * xs) * phi2 + 2.0 * xs * psi
    return F, dF


def manufactured_data(slab: LinearSlab):
    """(F*, g, r0, r1) for the manufactured solution on the slab's grid; g
    is given per node, r from the exact trace."""
    s = slab.sector
    F, dF = manufactured_solution(slab.x.nodes, s)
    sq = slab.sq
    g = slab.eps * slab.v1 * dF + np.stack([A @ (f / sq) for A, f in zip(slab.operators, F)]) * sq
    r0 = np.where(slab.wall.incoming[0], F[0] - apply_Pgamma(F[0], slab.wall, 0), 0.0)
    r1 = np.where(slab.wall.incoming[1], F[-1] - apply_Pgamma(F[-1], slab.wall, 1), 0.0)
    mass = float(slab.x.integrate(s.integrate(F)))
    return F, g, r0, r1, mass


# -- remainder iteration ---------------------------------------------------------------------


def _weighted_sup(F, sector, spec):
    w = weight_w(spec, sector.nodes) / maxwellian_sqrt(sector.nodes, 1.0)
    return float(np.max(np.abs(F * w)))


def iterate_remainder(bundle: ExpansionBundle, collision: CollisionIntegral | None = None,
                      tol: float = 1e-9, max_iter: int = 200, wall_mode: str = "lagged",
                      spec: WeightSpec | None = None, p: float = 4.0, log=None):
    """Fixed-point iteration for F_R:

        eps v1 F' + L_M F = eps^(1-a) A_s - eps L_as F^n + eps^(1+a) Q(F^n, F^n),
        F|in = P_gamma F + I_gamma F^n + eps^(1-a) r,

    with L_as F = -[Q(Y, F) + Q(F, Y)], Y = G + B0 + B1 + eps F2.  With
    ``wall_mode="lagged"`` P_gamma uses the Maxwellians at the bulk wall
    temperatures theta(0), theta(1) and I_gamma the difference to the true
    walls; ``"exact"`` puts the true walls into P_gamma."""
    b = bundle
    s, eps, a = b.sector, b.eps, b.alpha
    spec = spec or WeightSpec()
    th0, th1 = b.profile.theta0, b.profile.theta1
    true_wall = WallOperator(s, th0, th1)
    if wall_mode == "lagged":
        wall = WallOperator(s, float(b.theta[0]), float(b.theta[-1]))
    elif wall_mode == "exact":
        wall = true_wall
    else:
        raise ValueError("wall_mode must be 'lagged' or 'exact'")
    if not b.operators:
        raise KineticError("bundle carries no local operators")
    slab = LinearSlab(b.x, s, b.operators, eps, wall)
    Q = collision or CollisionIntegral(b.grid, 4, 8)
    Y = b.G + b.B0 + b.B1 + eps * b.F2
    envs = [Envelope(float(t)) for t in b.theta]
    ea = eps ** a
    src0 = eps ** (1 - a) * b.A_s
    r0 = eps ** (1 - a) * b.r0
    r1 = eps ** (1 - a) * b.r1
    F = np.zeros_like(b.M)
    history, diffs = [], []
    growth = 0
    sweep = np.inf
    uniform = b.profile.uniform
    for it in range(1, max_iter + 1):
        if it == 1:
            coupling = np.zeros_like(F)
        else:
            coupling = 0.5 * eps * Q.symmetric_many(s.expand(F), s.expand(2 * Y + ea * F), s, envs)
        src = src0 + 0.5 * (coupling[1:] + coupling[:-1])
        d0, d1 = r0, r1
        if wall_mode == "lagged":
            d0 = r0 + apply_Pgamma(F[0], true_wall, 0) - apply_Pgamma(F[0], wall, 0)
            d1 = r1 + apply_Pgamma(F[-1], true_wall, 1) - apply_Pgamma(F[-1], wall, 1)
        F_new, rep = slab.solve(src, d0, d1, cells=True)
        sweep = _weighted_sup(F_new - F, s, spec)
        size = _weighted_sup(F_new, s, spec)
        zero_mean = {"coupling": float(b.x.integrate(s.integrate(coupling))),
                     "A_s": float(np.sum(np.diff(b.x.nodes) * s.integrate(b.A_s)))}
        entry = {"iteration": it, "difference": sweep, "norm": size, "transport_residual": rep.transport_residual,
                 "boundary_residual": rep.boundary_residual, **{f"mean_{k}": v for k, v in zero_mean.items()}}
        history.append(entry)
        if log is not None:
            log(entry)
        F = F_new
        if len(diffs) and sweep > diffs[-1]:
            growth += 1
            if growth >= 10:
                raise DivergenceError("remainder iteration diverges; try a smaller |theta1 - theta0| or eps")
        else:
            growth = 0
        diffs.append(sweep)
        if uniform or sweep <= tol:
            break
    rep.iterations = len(history)
    rep.sweep_residual = sweep
    rep.history = history
    rep.norms = norm_triple(F, b.M, b.x, s, spec, p, b.nu)
    return F, rep


def contraction_ratios(report: SolveReport) -> np.ndarray:
    d = np.array([h["difference"] for h in report.history])
    return d[1:] / np.maximum(d[:-1], 1e-300)


def write_history(report: SolveReport, path: str | Path) -> Path:
    path = Path(path)
    keys = list(report.history[0]) if report.history else ["iteration"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for h in report.history:
            w.writerow([repr(h[k]) if isinstance(h[k], float) else h[k] for k in keys])
    return path


# -- end to end --------------------------------------------------------------------------------


@dataclass
class KineticResult:
    F: np.ndarray
    F_R: np.ndarray
    bundle: ExpansionBundle
    report: SolveReport
    mass_factor: float
    original_residual: dict
    distance: float


def sampled_residual(F, bundle: ExpansionBundle, collision: CollisionIntegral, cells=None) -> dict:
    """Residual of the box-discretized nonlinear equation v1 F' = eps^{-1} Q(F, F)
    with the interpolated Q at a few cells.  It is reported against the
    transport term v1 F' (the residual is then the relative mismatch between
    the interpolated Q and the tabulated linearization used by the solver) and
    against the quadrature floor eps^{-1} |Q(M, M)|."""
    b = bundle
    s = b.sector
    J = b.x.count - 1
    cells = np.unique(np.linspace(0, J - 1, 5).astype(int)) if cells is None else np.asarray(cells)
    nodes = np.unique(np.concatenate([cells, cells + 1]))
    envs = [Envelope(float(b.theta[j])) for j in nodes]
    QF = dict(zip(nodes, 0.5 * collision.symmetric_many(s.expand(F[nodes]), s.expand(F[nodes]), s, envs)))
    QM = dict(zip(nodes, 0.5 * collision.symmetric_many(s.expand(b.M[nodes]), s.expand(b.M[nodes]), s, envs)))
    v1 = s.nodes[:, 0]
    dx = np.diff(b.x.nodes)
    res, floor, flux_term = [], [], []
    for j in cells:
        t = v1 * (F[j + 1] - F[j]) / dx[j]
        c = 0.5 * (QF[j] + QF[j + 1]) / b.eps
        res.append(float(np.max(np.abs(t - c))))
        floor.append(float(np.max(np.abs(0.5 * (QM[j] + QM[j + 1]) / b.eps))))
        flux_term.append(float(np.max(np.abs(t))))
    return {"cells": cells.tolist(), "residual": res, "floor": floor, "transport": flux_term,
            "relative": float(np.max(np.array(res) / np.maximum(flux_term, 1e-300))),
            "max_ratio_to_floor": float(np.max(np.array(res) / np.maximum(floor, 1e-300)))}


def solve_full(eps: float, theta0: float, theta1: float, grid: VelocityGrid, alpha: float = ALPHA_DEFAULT,
               response: HeatResponse | None = None, collision: CollisionIntegral | None = None,
               tol: float = 1e-9, max_iter: int = 200, spec: WeightSpec | None = None, p: float = 4.0,
               x: SpatialGrid | None = None, residual_cells=None, log=None, bundle: ExpansionBundle | None = None
               ) -> KineticResult:
    """F = F_a + eps^(1+alpha) F_R, mass renormalized to one."""
    if not 0 < eps <= 0.2:
        raise ValueError("eps must lie in (0, 0.2]")
    if abs(theta1 - theta0) > 0.5:
        raise ValueError("|theta1 - theta0| must not exceed 0.5")
    spec = spec or WeightSpec()
    Q = collision or CollisionIntegral(grid, 4, 8)
    b = bundle or build_expansion(grid, theta0, theta1, eps, alpha, response=response, collision=Q, x=x)
    F_R, rep = iterate_remainder(b, Q, tol, max_iter, spec=spec, p=p, log=log)
    Fa = b.approximation
    F = Fa + eps ** (1 + alpha) * F_R
    mass = float(b.x.integrate(b.sector.integrate(F)))
    F = F / mass
    res = sampled_residual(F, b, Q, residual_cells)
    dist = _weighted_sup(F * mass - Fa, b.sector, spec)
    return KineticResult(F, F_R, b, rep, mass, res, dist)
