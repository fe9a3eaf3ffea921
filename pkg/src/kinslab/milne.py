"""Half-space Milne problem

    v1 dF/dy + L_mu F = 0,  F(0)|_{v1>0} = G,  int v1 F dv = 0,  F(y) -> F_inf in Ker L_mu,

solved in the sqrt(mu)-normalization h = F/sqrt(mu) on a truncated interval
[0, Y] with a specular (mirror) condition at y = Y.

Mass, momentum and energy fluxes are conserved cell by cell by the box
scheme (the collision matrix annihilates the invariants exactly) and the
mirror makes all three vanish at Y, so the flux condition holds to rounding
and the linearly growing diffusion modes are excluded.  The far field is the
kernel projection of h(Y).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .collision import LinearizedOperator, compute_alpha_beta, maxwellian_sqrt, mean_free_path
from .grid import Sector, SpatialGrid, VelocityGrid
from .maxwell import WeightSpec, weight_w
from .ns_profile import SlipCoefficients
from .slab import BoxSystem

FLUX_TOL = 1e-6
CROSS_TOL = 1e-6


class MilneError(RuntimeError):
    pass


def half_space_grid(Y: float = 20.0, first: float = 0.02, growth: float = 1.1,
                    max_cell: float = 0.25, refine: int = 1) -> SpatialGrid:
    """Nodes on [0, Y l], l the mean free path; ``Y``, ``first`` and
    ``max_cell`` are in mean free paths.  Cells grow geometrically from
    ``first`` up to ``max_cell``; ``refine`` splits every cell into that many."""
    if Y <= 0 or first <= 0:
        raise ValueError("Y and first cell must be positive")
    mfp = mean_free_path()
    Y, first, max_cell = Y * mfp, first * mfp, max_cell * mfp
    y = [0.0]
    h = first
    while y[-1] + h < Y:
        y.append(y[-1] + h)
        h = min(h * growth, max_cell)
    if Y - y[-1] < 0.3 * h and len(y) > 1:
        y[-1] = Y
    else:
        y.append(Y)
    y = np.array(y)
    if refine > 1:
        t = np.arange(refine) / refine
        y = np.concatenate([(y[:-1, None] + np.diff(y)[:, None] * t).ravel(), y[-1:]])
    return SpatialGrid(y, "wall_refined", growth)


def kernel_coordinates(sector: Sector, h: np.ndarray, theta: float = 1.0) -> dict:
    """Coordinates of sqrt(M) h on M, xi_j M, ((|xi|^2-3)/2) M, with M the unit
    Maxwellian at ``theta`` and xi = v/sqrt(theta), solved against the discrete
    Gram matrix of the sector's invariants."""
    v = sector.nodes / np.sqrt(theta)
    sq = maxwellian_sqrt(sector.nodes, theta)
    basis = {"mass": sq, "v1": v[:, 0] * sq, "v2": v[:, 1] * sq, "v3": v[:, 2] * sq,
             "energy": 0.5 * (np.sum(v * v, axis=1) - 3) * sq}
    names = {"full": list(basis), "axisym": ["mass", "v1", "energy"], "odd2": ["v2"], "odd3": ["v3"]}[sector.name]
    B = np.array([basis[k] for k in names])
    w = sector.weights
    gram = (B * w) @ B.T
    coef = np.linalg.solve(gram, (B * w) @ h)
    out = dict.fromkeys(basis, 0.0)
    out.update(zip(names, (float(c) for c in coef)))
    return out


@dataclass
class DecayFit:
    C: float
    sigma0: float
    r2: float
    ok: bool
    skipped: bool = False


@dataclass
class MilneSolution:
    """h = F/sqrt(mu) on the half-space nodes (reduced sector vectors)."""

    y: SpatialGrid
    sector: Sector
    h: np.ndarray
    h_inf: np.ndarray
    coords: dict
    flux: np.ndarray
    residual: float
    decay: DecayFit | None = None
    extra: dict = field(default_factory=dict)
    theta: float = 1.0

    @property
    def F(self) -> np.ndarray:
        return self.h * maxwellian_sqrt(self.sector.nodes, self.theta)

    @property
    def F_inf(self) -> np.ndarray:
        return self.h_inf * maxwellian_sqrt(self.sector.nodes, self.theta)

    def layer(self) -> np.ndarray:
        """h(y) - h_inf, the decaying part."""
        return self.h - self.h_inf


class MilneSolver:
    """Factorized Milne problem for one velocity grid and sector; solves for
    any number of incoming data."""

    def __init__(self, grid: VelocityGrid, sector: str | Sector = "axisym", Y: float = 20.0,
                 y_grid: SpatialGrid | None = None, operator: LinearizedOperator | None = None):
        self.grid = grid
        self.L = operator or LinearizedOperator(grid, sector)
        self.sector = self.L.sector
        self.y = y_grid or half_space_grid(Y)
        s = self.sector
        self.v1 = s.nodes[:, 0]
        refl = s.reflection()
        minus = np.flatnonzero(self.v1 < 0)
        right = np.zeros((minus.size, s.size))
        right[np.arange(minus.size), refl[minus]] = 1.0
        self.system = BoxSystem(self.y.nodes, self.v1, self.L.matrix, right=right)

    def solve(self, incoming: np.ndarray, normalized: bool = False) -> MilneSolution:
        """``incoming`` is G (or G/sqrt(mu) with ``normalized``) on the sector
        nodes, or on the full grid; only v1 > 0 entries are used."""
        s = self.sector
        g = np.asarray(incoming, dtype=float)
        if g.shape[-1] == self.grid.size and s.size != self.grid.size:
            g = s.restrict(g)
        th = self.L.theta
        sq = maxwellian_sqrt(s.nodes, th)
        if not normalized:
            g = g / sq
        plus = self.system.plus
        h = self.system.solve(left_data=g[plus])
        res = self.system.residual(h, left_data=g[plus])
        flux = s.integrate(h * s.nodes[:, 0] * sq)
        scale = max(np.max(np.abs(g[plus] * sq[plus])), 1e-300)
        if np.max(np.abs(flux)) > FLUX_TOL * scale:
            raise MilneError(f"flux condition violated: {np.max(np.abs(flux)):.3e}")
        h_inf = self.L.project_kernel(h[-1])
        sol = MilneSolution(self.y, s, h, h_inf, kernel_coordinates(s, h_inf, th), flux, res, theta=th)
        sol.decay = verify_decay(sol)
        return sol


def solve_milne(incoming: np.ndarray, grid: VelocityGrid, sector: str = "axisym", Y: float = 20.0,
                y_grid: SpatialGrid | None = None) -> MilneSolution:
    return MilneSolver(grid, sector, Y, y_grid).solve(incoming)


def verify_decay(solution: MilneSolution, spec: WeightSpec | None = None, window=(0.25, 0.75),
                 r2_min: float = 0.99) -> DecayFit:
    """Fit log sup_v |w (h(y) - h_inf)| ~ log C - sigma0 y over the middle of
    the interval.  ``varpi = 0`` is allowed here (weight without the Gaussian
    factor)."""
    if spec is None:
        beta, varpi = 4.0, 0.125
    else:
        beta, varpi = spec.beta, spec.varpi
    s = solution.sector
    s2 = np.sum(s.nodes ** 2, axis=1)
    w = (1 + s2) ** (beta / 2) * np.exp(varpi * s2)
    dist = np.max(np.abs(w * solution.layer()), axis=1)
    if np.max(dist) == 0.0:
        return DecayFit(0.0, np.inf, 1.0, True, skipped=True)
    y = solution.y.nodes
    Y = y[-1]
    sel = (y >= window[0] * Y) & (y <= window[1] * Y) & (dist > 0)
    if sel.sum() < 3:
        return DecayFit(np.nan, np.nan, 0.0, False)
    ly = np.log(dist[sel])
    A = np.vstack([np.ones(sel.sum()), -y[sel]]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum((ly - pred) ** 2) / ss if ss > 0 else 1.0
    sigma0 = float(coef[1])
    return DecayFit(float(np.exp(coef[0])), sigma0, float(r2), bool(r2 >= r2_min and sigma0 > 0))


def weighted_distance(solution: MilneSolution, spec: WeightSpec) -> np.ndarray:
    return np.max(np.abs(weight_w(spec, solution.sector.nodes) * solution.layer()), axis=1)


# -- slip coefficients -----------------------------------------------------------


@dataclass
class SlipResult:
    coefficients: SlipCoefficients
    c_bar_v3: float
    solutions: dict
    cross: dict
    positive: dict


def burnett_incoming(alpha_beta, kind: str) -> np.ndarray:
    """Incoming datum alpha A_i mu (or beta B mu) in the sqrt(mu)-normalization,
    taken from the discrete inverse L^{-1}(X sqrt(mu)) itself."""
    return alpha_beta.responses[kind][2]


def extract_slip_coefficients(grid: VelocityGrid, Y: float = 20.0, y_grid: SpatialGrid | None = None,
                              alpha_beta=None) -> SlipResult:
    """Solve the five Milne problems with the Burnett responses as incoming data
    and read the slip and jump coefficients off the far fields."""
    ab = alpha_beta or compute_alpha_beta(grid)
    sols, cross = {}, {}
    # one factorized solver alive at a time: the odd sectors take ~2 GB each at N=16
    solver = None
    for kind in ("A1", "B", "A2", "A3"):
        L = ab.responses[kind][0]
        if solver is None or solver.sector.name != L.sector.name:
            solver = None
            solver = MilneSolver(grid, L.sector, Y, y_grid, operator=L)
        sols[kind] = solver.solve(burnett_incoming(ab, kind), normalized=True)
    del solver
    c = {k: sols[k].coords for k in sols}
    for kind, main in (("A1", ("mass", "energy")), ("B", ("mass", "energy")), ("A2", ("v2",)), ("A3", ("v3",))):
        dom = max(abs(c[kind][m]) for m in main)
        others = [abs(v) for name, v in c[kind].items() if name not in main]
        cross[kind] = max(others) / dom if dom > 0 else 0.0
        if cross[kind] > CROSS_TOL:
            raise MilneError(f"far field of the {kind} problem has cross components {cross[kind]:.3e}")
    coeffs = SlipCoefficients(c["A1"]["mass"], c["A1"]["energy"], c["A2"]["v2"], c["B"]["mass"], c["B"]["energy"])
    positive = {k: getattr(coeffs, k) > 0 for k in ("c_alpha1", "c_alpha2", "c_bar", "c_beta1", "c_beta2")}
    return SlipResult(coeffs, c["A3"]["v3"], sols, cross, positive)


def export_slip_csv(result: SlipResult, grid: VelocityGrid, path: str | Path, Y: float) -> Path:
    c = result.coefficients
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["points_per_axis", "v_max", "Y", "c_alpha1", "c_alpha2", "c_bar", "c_beta1", "c_beta2"])
        w.writerow([grid.points_per_axis, repr(grid.v_max), repr(float(Y))]
                   + [repr(float(getattr(c, k))) for k in ("c_alpha1", "c_alpha2", "c_bar", "c_beta1", "c_beta2")])
    return path
