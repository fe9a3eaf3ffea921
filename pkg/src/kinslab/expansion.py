"""Navier-Stokes plus Knudsen-layer approximation of the heat-conduction slab

    F_a = M + eps G + eps (B0 + B1) + eps^2 F2,

with the residual A_s of the interior equation and the boundary defect r
that drive the remainder.

Everything is built from the discrete operators actually used by the kinetic
solver.  The Chapman-Enskog response is tabulated as Chebyshev series in the
temperature, and the bulk profile is the one whose heat flux is exactly
constant for the discrete conductivity.  A_s is the cell defect of F_a in the
box scheme, so it is microscopic whenever the fluxes of F_a are constant in x.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.optimize import root

from .collision import CollisionIntegral, Envelope, LinearizedOperator, maxwellian_sqrt, mean_free_path
from .grid import Sector, SpatialGrid, VelocityGrid
from .maxwell import burnett
from .milne import MilneSolver
from .ns_profile import NSProfile, ProfileError, solve_algebraic

ALPHA_DEFAULT = 0.25
FLUX_TOL = 1e-8
MICRO_TOL = 1e-6


class ExpansionError(RuntimeError):
    pass


def unit_maxwellian(nodes: np.ndarray, theta) -> np.ndarray:
    """(2 pi theta)^(-3/2) exp(-|v|^2/(2 theta)); ``theta`` may be an array
    (result shape theta.shape + (n,))."""
    th = np.asarray(theta, dtype=float)[..., None]
    s = np.sum(nodes * nodes, axis=-1)
    return (2 * np.pi * th) ** -1.5 * np.exp(-s / (2 * th))


# -- Chapman-Enskog heat response ---------------------------------------------------


class HeatResponse:
    """R(theta) = L_theta^{-1}[(I-P) B(v/sqrt(theta)) M_theta] and the second-order
    response U(theta), as Chebyshev series on [theta_lo, theta_hi].

    L_theta is the discrete linearized operator at unit density; values are
    F-values on the sector representatives.  With q(theta) the heat flux of R,
    R_hat = R/q has unit heat flux for every theta, and

        U = theta L_theta^{-1}[phi (I-P)(v1 dR_hat/dtheta) + Q(R_hat, R_hat)],
        phi = sqrt(theta)/q,

    so that the profile with theta' = C phi(theta) has G = -C R_hat(theta) and
    F2's microscopic part (C^2/P0) U(theta).
    """

    def __init__(self, grid: VelocityGrid, theta_lo: float, theta_hi: float, sector: str | Sector = "axisym",
                 points: int = 12, collision: CollisionIntegral | None = None, with_second_order: bool = True):
        if not 0 < theta_lo < theta_hi:
            raise ValueError("need 0 < theta_lo < theta_hi")
        self.grid = grid
        self.sector = sector if isinstance(sector, Sector) else Sector(grid, sector)
        self.lo, self.hi = float(theta_lo), float(theta_hi)
        self.points = points
        s = self.sector
        v = s.nodes
        k = np.arange(points)
        self.t_nodes = np.cos(np.pi * (k + 0.5) / points)[::-1]
        self.theta_nodes = self._theta(self.t_nodes)
        R, ops = [], []
        for th in self.theta_nodes:
            L = LinearizedOperator(grid, s, th)
            sq = maxwellian_sqrt(v, th)
            d = burnett("B", v / np.sqrt(th)) * sq
            d = d - L.project_kernel(d)
            R.append(L.invert(d) * sq)
            ops.append(L)
        R = np.array(R)
        self.q_nodes = s.integrate(R * v[:, 0] * np.sum(v * v, axis=1))
        if np.any(self.q_nodes <= 0):
            raise ExpansionError("heat flux of the Chapman-Enskog response is not positive")
        self._q = cheb.chebfit(self.t_nodes, self.q_nodes, points - 1)
        self._Rhat = cheb.chebfit(self.t_nodes, R / self.q_nodes[:, None], points - 1)
        self._dRhat = cheb.chebder(self._Rhat, scl=self._scale)
        # discrete pressure law: the momentum flux of rho M_theta is rho S1(theta)
        self.S1_nodes = s.integrate(v[:, 0] ** 2 * unit_maxwellian(v, self.theta_nodes))
        self._s1 = cheb.chebfit(self.t_nodes, self.S1_nodes, points - 1)
        # antiderivatives for the profile: K = int q/sqrt(theta), I = int q/(sqrt(theta) S1)
        rt = np.sqrt(self.theta_nodes)
        self._k = cheb.chebint(cheb.chebfit(self.t_nodes, self.q_nodes / rt, points - 1),
                               lbnd=-1, scl=1 / self._scale)
        self._i = cheb.chebint(cheb.chebfit(self.t_nodes, self.q_nodes / (rt * self.S1_nodes), points - 1),
                               lbnd=-1, scl=1 / self._scale)
        self._U = None
        if with_second_order:
            self._build_second_order(ops, collision)

    @property
    def _scale(self) -> float:
        return 2.0 / (self.hi - self.lo)

    def _t(self, theta):
        return (2.0 * np.asarray(theta, dtype=float) - self.lo - self.hi) / (self.hi - self.lo)

    def _theta(self, t):
        return 0.5 * (self.lo + self.hi) + 0.5 * (self.hi - self.lo) * np.asarray(t)

    def _build_second_order(self, ops, collision):
        s, g = self.sector, self.grid
        v = s.nodes
        Q = collision or CollisionIntegral(g, 4, 8)
        Rh = self.R_hat(self.theta_nodes)
        dRh = self.dR_hat(self.theta_nodes)
        full = s.expand(Rh)
        qq = 0.5 * Q.symmetric_many(full, full, s, [Envelope(th) for th in self.theta_nodes])
        phi = self.phi(self.theta_nodes)
        U = []
        for i, th in enumerate(self.theta_nodes):
            L = ops[i]
            sq = maxwellian_sqrt(v, th)
            d = (phi[i] * v[:, 0] * dRh[i] + qq[i]) / sq
            d = d - L.project_kernel(d)
            U.append(th * L.invert(d) * sq)
        self.QRR_nodes = qq
        self._QRR = cheb.chebfit(self.t_nodes, qq, self.points - 1)
        self._U = cheb.chebfit(self.t_nodes, np.array(U), self.points - 1)
        self._dU = cheb.chebder(self._U, scl=self._scale)

    # -- evaluation ---------------------------------------------------------

    def _eval(self, c, theta):
        th = np.asarray(theta, dtype=float)
        out = cheb.chebval(self._t(th), c)
        return np.moveaxis(out, 0, -1) if c.ndim > 1 else out

    def q(self, theta):
        return self._eval(self._q, theta)

    def S1(self, theta):
        return self._eval(self._s1, theta)

    def phi(self, theta):
        return np.sqrt(theta) / self.q(theta)

    def dphi(self, theta):
        dq = self._eval(cheb.chebder(self._q, scl=self._scale), theta)
        q, r = self.q(theta), np.sqrt(theta)
        return (0.5 * q / r - r * dq) / q ** 2

    def R_hat(self, theta):
        return self._eval(self._Rhat, theta)

    def dR_hat(self, theta):
        return self._eval(self._dRhat, theta)

    def U(self, theta):
        if self._U is None:
            raise ExpansionError("second-order response was not built")
        return self._eval(self._U, theta)

    def dU(self, theta):
        return self._eval(self._dU, theta)

    def QRR(self, theta):
        return self._eval(self._QRR, theta)

    def K(self, theta):
        return self._eval(self._k, theta)

    def I(self, theta):  # noqa: E743
        return self._eval(self._i, theta)

    def interpolation_error(self) -> float:
        """Relative error of the R_hat series at the interval midpoints between
        nodes, against direct inversions."""
        s, v = self.sector, self.sector.nodes
        ths = self._theta(0.5 * (self.t_nodes[1:] + self.t_nodes[:-1]))[::3]
        err = 0.0
        for th in ths:
            L = LinearizedOperator(self.grid, s, th)
            sq = maxwellian_sqrt(v, th)
            d = burnett("B", v / np.sqrt(th)) * sq
            R = L.invert(d - L.project_kernel(d)) * sq
            q = s.integrate(R * v[:, 0] * np.sum(v * v, axis=1))
            err = max(err, float(np.max(np.abs(R / q - self.R_hat(th))) / np.max(np.abs(R / q))))
        return err


# -- bulk profile ---------------------------------------------------------------------


@dataclass
class ConductionProfile:
    """u = 0 Navier-Stokes profile with the discrete conductivity and pressure
    law: rho S1(theta) = P0 (S1 the grid value of int v1^2 M_theta, theta up to
    quadrature error) and q(theta) theta'/sqrt(theta) = C, with per-wall jump
    relations

        rho(0) (theta(0) - theta0) = eps c0 theta'(0),
        rho(1) (theta1 - theta(1)) = eps c1 theta'(1),

    and unit mass."""

    theta0: float
    theta1: float
    eps: float
    c0: float
    c1: float
    theta_a: float
    theta_b: float
    P0: float
    C: float
    response: HeatResponse | None = field(repr=False, default=None)
    residuals: tuple = (0.0, 0.0, 0.0)

    @property
    def uniform(self) -> bool:
        return self.C == 0.0

    def theta(self, x):
        x = np.asarray(x, dtype=float)
        if self.uniform:
            return np.full_like(x, self.theta_a)
        r = self.response
        target = r.K(self.theta_a) + self.C * x
        th = self.theta_a + (self.theta_b - self.theta_a) * x
        for _ in range(30):
            step = (r.K(th) - target) / (r.q(th) / np.sqrt(th))
            th = th - step
            if np.max(np.abs(step)) < 1e-15:
                break
        return th

    def dtheta(self, x):
        if self.uniform:
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.C * self.response.phi(self.theta(x))

    def d2theta(self, x):
        if self.uniform:
            return np.zeros_like(np.asarray(x, dtype=float))
        th = self.theta(x)
        return self.C ** 2 * self.response.phi(th) * self.response.dphi(th)

    def rho(self, x):
        if self.uniform:
            return np.ones_like(np.asarray(x, dtype=float))
        return self.P0 / self.response.S1(self.theta(x))

    def total_mass(self) -> float:
        if self.uniform:
            return 1.0
        r = self.response
        return float(self.P0 * (r.I(self.theta_b) - r.I(self.theta_a)) / self.C)

    @property
    def wall_gradients(self) -> tuple[float, float]:
        return float(self.dtheta(0.0)), float(self.dtheta(1.0))

    def jump_residuals(self) -> tuple[float, float]:
        g0, g1 = self.wall_gradients
        ra = float(self.rho(0.0)) * (self.theta_a - self.theta0) - self.eps * self.c0 * g0
        rb = float(self.rho(1.0)) * (self.theta1 - self.theta_b) - self.eps * self.c1 * g1
        return float(ra), float(rb)


def _profile_equations(z, resp, theta0, theta1, eps, c0, c1):
    ta, tb, P0 = z
    C = resp.K(tb) - resp.K(ta)
    g0, g1 = C * resp.phi(ta), C * resp.phi(tb)
    return np.array([P0 / resp.S1(ta) * (ta - theta0) - eps * c0 * g0,
                     P0 / resp.S1(tb) * (theta1 - tb) - eps * c1 * g1,
                     P0 * (resp.I(tb) - resp.I(ta)) / C - 1.0])


def solve_conduction_profile(response: HeatResponse | None, theta0: float, theta1: float, eps: float,
                             c0: float, c1: float, seed: NSProfile | None = None) -> ConductionProfile:
    if theta0 == theta1:
        return ConductionProfile(theta0, theta1, eps, c0, c1, theta0, theta0, theta0, 0.0, response)
    if response is None:
        raise ExpansionError("unequal walls need a heat response table")
    seed = seed or solve_algebraic(theta0, theta1, eps, 0.5 * (c0 + c1))
    z0 = np.array([float(seed.theta(0.0)), float(seed.theta(1.0)), seed.P0])
    sol = root(_profile_equations, z0, args=(response, theta0, theta1, eps, c0, c1), method="hybr",
               options={"xtol": 1e-14})
    res = _profile_equations(sol.x, response, theta0, theta1, eps, c0, c1)
    if not np.all(np.isfinite(res)) or np.max(np.abs(res)) > 1e-11:
        raise ProfileError(f"conduction profile did not converge (residual {np.max(np.abs(res)):.2e})")
    ta, tb, P0 = (float(c) for c in sol.x)
    C = float(response.K(tb) - response.K(ta))
    return ConductionProfile(theta0, theta1, eps, c0, c1, ta, tb, P0, C, response, tuple(float(r) for r in res))


# -- slab grid --------------------------------------------------------------------------


def slab_grid(eps: float, rho=(1.0, 1.0), first: float = 0.05, growth: float = 1.2,
              bulk: float = 0.025) -> SpatialGrid:
    """Nodes on [0, 1] graded toward both walls: cells start at ``first`` mean
    free paths (in the layer variable rho x/eps), grow by ``growth`` up to the
    bulk spacing, and the middle is uniform."""
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 0.5]")
    mfp = mean_free_path()

    def side(r):
        pts, h = [0.0], first * mfp * eps / r
        while h < bulk and pts[-1] + h < 0.45:
            pts.append(pts[-1] + h)
            h *= growth
        return np.array(pts)

    a, b = side(rho[0]), side(rho[1])
    span = 1.0 - a[-1] - b[-1]
    n = max(int(np.ceil(span / bulk)), 1)
    mid = a[-1] + span * np.arange(1, n) / n
    x = np.concatenate([a, mid, (1.0 - b)[::-1]])
    x[-1] = 1.0
    return SpatialGrid(x, "wall_refined", growth)


# -- local operators ---------------------------------------------------------------------


def local_operators(grid: VelocityGrid, sector: Sector, rho, theta, theta_ref: float = 1.0):
    """L_{M(x_j)} for M = rho_j M_{theta_j}, as matrices on F/sqrt(M_ref) with
    M_ref the unit Maxwellian at ``theta_ref``, and the local collision
    frequencies."""
    mats, nus = [], []
    for r, th in zip(np.atleast_1d(rho), np.atleast_1d(theta)):
        L = LinearizedOperator(grid, sector, float(th), float(r))
        mats.append(L.in_normalization(theta_ref))
        nus.append(L.nu)
    return mats, np.array(nus)


# -- Knudsen layers -----------------------------------------------------------------------


@dataclass
class WallLayer:
    """Unit layer at one wall: the Milne solution for the incoming datum
    R(theta_w)/sqrt(theta_w), on the wall's own layer variable."""

    theta_w: float
    rho_w: float
    y: np.ndarray
    layer: np.ndarray          # F-values minus far field, on the kept nodes
    far_field: np.ndarray
    energy: float
    flux: float
    decay: object

    @property
    def jump_coefficient(self) -> float:
        return self.theta_w * self.energy


def _wall_layer(grid, sector, response, theta_w, rho_w, dist, eps, Y_cut):
    mfp = mean_free_path()
    y = rho_w * np.asarray(dist) / eps
    keep = int(np.searchsorted(y, Y_cut * mfp, side="right"))
    keep = max(keep, min(4, y.size))
    yk = y[:keep]
    L = LinearizedOperator(grid, sector, theta_w)
    datum = response.q(theta_w) * response.R_hat(theta_w) / np.sqrt(theta_w)
    sol = MilneSolver(grid, sector, y_grid=SpatialGrid(yk, "wall_refined"), operator=L).solve(datum)
    sq = maxwellian_sqrt(sector.nodes, theta_w)
    lay = np.zeros((y.size, sector.size))
    lay[:keep] = (sol.h - sol.h_inf) * sq
    return WallLayer(theta_w, rho_w, y, lay, sol.F_inf, sol.coords["energy"], float(np.max(np.abs(sol.flux))),
                     sol.decay)


@dataclass
class KnudsenLayers:
    B0: np.ndarray
    B1: np.ndarray
    Psi0: np.ndarray
    Psi1: np.ndarray
    wall0: WallLayer
    wall1: WallLayer
    boundary_identity: float = 0.0

    @property
    def coefficients(self) -> tuple[float, float]:
        return self.wall0.jump_coefficient, self.wall1.jump_coefficient


def build_knudsen_layers(profile: ConductionProfile, x: SpatialGrid, sector: Sector, grid: VelocityGrid,
                         Y_cut: float = 60.0) -> KnudsenLayers:
    """B0 at x = 0 and B1 at x = 1 (reflected velocities), scaled by the wall
    gradients of ``profile``.  ``Y_cut`` (mean free paths) truncates each layer
    with a mirror; beyond it the layer is set to zero."""
    resp, eps = profile.response, profile.eps
    xs = x.nodes
    n = sector.size
    if profile.uniform:
        z = np.zeros((xs.size, n))
        return KnudsenLayers(z, z.copy(), np.zeros(n), np.zeros(n), None, None)
    w0 = _wall_layer(grid, sector, resp, profile.theta0, float(profile.rho(0.0)), xs, eps, Y_cut)
    w1 = _wall_layer(grid, sector, resp, profile.theta1, float(profile.rho(1.0)), (1.0 - xs)[::-1], eps, Y_cut)
    g0, g1 = profile.wall_gradients
    refl = sector.reflection()
    B0 = g0 * w0.layer
    B1 = -g1 * w1.layer[::-1][:, refl]
    Psi0 = g0 * w0.far_field
    Psi1 = -g1 * w1.far_field[refl]
    # B0(0) = -G0(0) - Psi(0) on the incoming half, G0 at the wall temperature
    plus = sector.nodes[:, 0] > 0
    G00 = -g0 / np.sqrt(profile.theta0) * resp.q(profile.theta0) * resp.R_hat(profile.theta0)
    G01 = -g1 / np.sqrt(profile.theta1) * resp.q(profile.theta1) * resp.R_hat(profile.theta1)
    d0 = np.max(np.abs(B0[0, plus] + G00[plus] + Psi0[plus]))
    d1 = np.max(np.abs(B1[-1, ~plus] + G01[~plus] + Psi1[~plus]))
    scale = max(np.max(np.abs(G00)), np.max(np.abs(G01)))
    return KnudsenLayers(B0, B1, Psi0, Psi1, w0, w1, float(max(d0, d1) / scale))


# -- second-order corrector ---------------------------------------------------------------


def _maxwell_modes(v, theta):
    """Unit Maxwellian and its energy mode (|v|^2 - 3 theta)/(2 theta) M_theta."""
    Mt = unit_maxwellian(v, theta)
    s = np.sum(v * v, axis=1)
    th = np.asarray(theta, dtype=float)[..., None]
    return Mt, (s - 3 * th) / (2 * th) * Mt


def _F2_of_theta(profile, sector, theta, m):
    """F2 as a function of temperature, the profile constants fixed; also chi."""
    resp, eps, P0, C = profile.response, profile.eps, profile.P0, profile.C
    v = sector.nodes
    Mt, E = _maxwell_modes(v, theta)
    v1sq = v[:, 0] ** 2
    micro = (C * C / P0) * resp.U(theta)
    S1 = sector.integrate(v1sq * Mt)
    S2 = sector.integrate(v1sq * E)
    rho = P0 / np.asarray(theta)
    chi = ((m / eps) * S1 - sector.integrate(v1sq * micro)) / (rho * S2)
    F2 = -(m / eps) * Mt + (chi * rho)[..., None] * E + micro
    return F2, chi


def build_F2(profile: ConductionProfile, layers: KnudsenLayers, x: SpatialGrid, sector: Sector):
    """(F2, dF2/dx, m(eps), chi) on the nodes of ``x``."""
    n = sector.size
    m = float(x.integrate(sector.integrate(layers.B0 + layers.B1)))
    if profile.uniform:
        z = np.zeros((x.count, n))
        return z, z.copy(), m, np.zeros(x.count)
    th = profile.theta(x.nodes)
    F2, chi = _F2_of_theta(profile, sector, th, m)
    resp = profile.response
    nodes_F2, _ = _F2_of_theta(profile, sector, resp.theta_nodes, m)
    c = cheb.chebder(cheb.chebfit(resp.t_nodes, nodes_F2, resp.points - 1), scl=resp._scale)
    dF2 = profile.dtheta(x.nodes)[:, None] * np.moveaxis(cheb.chebval(resp._t(th), c), 0, -1)
    return F2, dF2, m, chi


# -- residual and boundary defect -----------------------------------------------------------


def wall_maxwellian(sector: Sector, theta_w: float, wall: int) -> np.ndarray:
    """Wall Maxwellian on the sector nodes with unit outgoing flux into the gas
    (v1 > 0 at x = 0, v1 < 0 at x = 1) on the grid."""
    v1 = sector.nodes[:, 0]
    Mt = unit_maxwellian(sector.nodes, theta_w)
    inc = v1 > 0 if wall == 0 else v1 < 0
    return Mt / sector.integrate(np.where(inc, np.abs(v1) * Mt, 0.0))


def diffuse_defect(F: np.ndarray, sector: Sector, mu_w: np.ndarray, wall: int) -> np.ndarray:
    """F|in - mu_w int_out F |v1| dv at one wall; zero on the outgoing half."""
    v1 = sector.nodes[:, 0]
    inc = v1 > 0 if wall == 0 else v1 < 0
    out_flux = sector.integrate(np.where(~inc, np.abs(v1) * F, 0.0))
    return np.where(inc, F - mu_w * out_flux, 0.0)


def cell_defect(Fa, Mx, Qff, ops, x: SpatialGrid, sector: Sector, eps: float, theta_ref: float = 1.0):
    """Box-scheme cell defect of the kinetic equation at F_a,

        v1 (F_{j+1} - F_j)/dx - eps^{-1} avg_j[-L_M (F - M) + Q(F - M, F - M)],

    returned as F-values per cell (J, n)."""
    v1 = sector.nodes[:, 0]
    sq = maxwellian_sqrt(sector.nodes, theta_ref)
    f = (Fa - Mx) / sq
    C = np.stack([-A @ fj for A, fj in zip(ops, f)]) + Qff / sq
    dx = np.diff(x.nodes)[:, None]
    D = v1 * (Fa[1:] - Fa[:-1]) / sq / dx - (0.5 / eps) * (C[1:] + C[:-1])
    return D * sq


@dataclass
class ExpansionBundle:
    """Approximation parts on the slab nodes (F-values on the sector
    representatives, shape (J+1, n)); A_s per cell (J, n); r0, r1 on the
    incoming halves (zero elsewhere)."""

    grid: VelocityGrid
    sector: Sector
    x: SpatialGrid
    eps: float
    alpha: float
    profile: ConductionProfile
    theta: np.ndarray
    dtheta: np.ndarray
    rho: np.ndarray
    M: np.ndarray
    G: np.ndarray
    B0: np.ndarray
    B1: np.ndarray
    F2: np.ndarray
    dF2: np.ndarray
    A_s: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    m_eps: float
    chi: np.ndarray
    layers: KnudsenLayers
    QYY: np.ndarray
    operators: list = field(repr=False, default_factory=list)
    nu: np.ndarray | None = field(repr=False, default=None)
    checks: dict = field(default_factory=dict)

    @property
    def approximation(self) -> np.ndarray:
        e = self.eps
        return self.M + e * self.G + e * (self.B0 + self.B1) + e * e * self.F2

    @property
    def cell_x(self) -> np.ndarray:
        return 0.5 * (self.x.nodes[1:] + self.x.nodes[:-1])


def build_expansion(grid: VelocityGrid, theta0: float, theta1: float, eps: float,
                    alpha: float = ALPHA_DEFAULT, response: HeatResponse | None = None,
                    collision: CollisionIntegral | None = None, x: SpatialGrid | None = None,
                    sector: str | Sector = "axisym", Y_cut: float = 60.0, passes: int = 4,
                    grid_options: dict | None = None) -> ExpansionBundle:
    """Profile, layers, F2, A_s and r for one eps.  ``response`` (the costly
    temperature tables) can be shared between eps values with the same walls."""
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 1/2)")
    if not 0 < eps <= 0.2:
        raise ValueError("eps must lie in (0, 0.2]")
    sec = sector if isinstance(sector, Sector) else Sector(grid, sector)
    uniform = theta0 == theta1
    Q = collision or CollisionIntegral(grid, 4, 8)
    if not uniform and response is None:
        response = HeatResponse(grid, min(theta0, theta1), max(theta0, theta1), sec, collision=Q)
    profile = solve_conduction_profile(response, theta0, theta1, eps, 0.0, 0.0)
    if x is None:
        x = slab_grid(eps, (float(profile.rho(0.0)), float(profile.rho(1.0))), **(grid_options or {}))
    # jump coefficients of the discrete layers on this grid: a few passes of
    # profile -> layers -> coefficients
    layers = build_knudsen_layers(profile, x, sec, grid, Y_cut)
    history = []
    if not uniform:
        for _ in range(passes):
            c0, c1 = layers.coefficients
            history.append((c0, c1))
            profile = solve_conduction_profile(response, theta0, theta1, eps, c0, c1)
            layers = build_knudsen_layers(profile, x, sec, grid, Y_cut)
            d = max(abs(layers.coefficients[0] - c0), abs(layers.coefficients[1] - c1))
            if d < 1e-12:
                break
    v = sec.nodes
    xs = x.nodes
    th = profile.theta(xs)
    dth = profile.dtheta(xs)
    rho = profile.rho(xs)
    M = rho[:, None] * unit_maxwellian(v, th)
    G = np.zeros_like(M) if uniform else -profile.C * response.R_hat(th)
    F2, dF2, m, chi = build_F2(profile, layers, x, sec)
    B = layers.B0 + layers.B1
    Y = G + B + eps * F2
    ops, nu = local_operators(grid, sec, rho, th)
    if uniform:
        QYY = np.zeros_like(M)
    else:
        QYY = 0.5 * Q.symmetric_many(sec.expand(Y), sec.expand(Y), sec, [Envelope(t) for t in th])
    Fa = M + eps * (G + B) + eps * eps * F2
    A_s = -cell_defect(Fa, M, eps * eps * QYY, ops, x, sec, eps) / eps
    mu0 = wall_maxwellian(sec, theta0, 0)
    mu1 = wall_maxwellian(sec, theta1, 1)
    r0 = -diffuse_defect(Fa[0], sec, mu0, 0) / eps ** 2
    r1 = -diffuse_defect(Fa[-1], sec, mu1, 1) / eps ** 2
    b = ExpansionBundle(grid, sec, x, eps, alpha, profile, th, dth, rho, M, G, layers.B0, layers.B1, F2, dF2,
                        A_s, r0, r1, m, chi, layers, QYY, ops, nu)
    b.checks = bundle_checks(b)
    b.checks["coefficient_passes"] = history
    return b


def bundle_checks(b: ExpansionBundle) -> dict:
    """Measured values of the bundle invariants."""
    s = b.sector
    v = s.nodes
    v1 = v[:, 0]
    s2 = np.sum(v * v, axis=1)
    scaleF2 = max(float(np.max(np.abs(s.integrate(v1 * v1 * np.abs(b.F2))))), 1e-300)
    flux = {
        "F2_mass_flux": float(np.max(np.abs(s.integrate(v1 * b.F2)))) / scaleF2,
        "F2_momentum_flux": float(np.max(np.abs(s.integrate(v1 * v1 * b.F2)))) / scaleF2,
        "F2_energy_flux": float(np.max(np.abs(s.integrate(v1 * s2 * b.F2)))) / scaleF2,
    }
    # macroscopic part of A_s, relative to its size, cell by cell
    inv = np.array([np.ones_like(v1), v1, s2])
    A = b.A_s
    mom = np.abs(np.stack([s.integrate(A * p) for p in inv], axis=1))
    size = np.stack([s.integrate(np.abs(A) * np.abs(p)) for p in inv], axis=1)
    tiny = 1e-300 + 1e-14 * float(np.max(size))
    micro = float(np.max(mom / np.maximum(size, tiny)))
    sizeB = max(float(np.max(np.abs(b.G))), 1e-300)
    out = dict(flux)
    out["A_s_macro"] = micro
    out["layer_mass_flux"] = float(np.max(np.abs(s.integrate(v1 * (b.B0 + b.B1))))) / sizeB
    out["F2_mass_identity"] = abs(float(b.x.integrate(s.integrate(b.F2))) + b.m_eps / b.eps)
    r_flux = [abs(float(s.integrate(v1 * b.r0))), abs(float(s.integrate(v1 * b.r1)))]
    r_scale = max(float(s.integrate(np.abs(v1 * b.r0))), float(s.integrate(np.abs(v1 * b.r1))), 1e-300)
    out["r_flux"] = max(r_flux) / r_scale
    out["boundary_identity"] = b.layers.boundary_identity
    Fa = b.approximation
    out["mass_defect"] = float(b.x.integrate(s.integrate(Fa))) - 1.0
    out["min_approximation"] = float(np.min(Fa))
    return out
