"""Hard-sphere collision machinery.

Conventions.  The collision kernel is B(v-u, w) = |(v-u).w| integrated over
the whole unit sphere.  In the sqrt(mu)-normalization the linearized operator
is ``L h = nu h - K h`` with ``K h(v) = int k(v,u) h(u) du`` and the Grad kernel
``k = k2 - k1``::

    k1(v,u) = (2 pi)^{-1/2} |v-u| exp(-(|v|^2+|u|^2)/4)
    k2(v,u) = 4 (2 pi)^{-1/2} |v-u|^{-1} exp(-|v-u|^2/8 - (|v|^2-|u|^2)^2/(8|v-u|^2))

With this sign ``<Lh,h> >= 0`` and ``L^{-1}(A_i sqrt(mu)) = alpha A_i sqrt(mu)``,
``L^{-1}(B sqrt(mu)) = beta B sqrt(mu)`` with positive transport coefficients.

For a Maxwellian of density rho and temperature theta the operator in the
sqrt(M)-normalization has kernel ``rho theta^{-1} k(v/sqrt(theta), u/sqrt(theta))``
and frequency ``rho theta^{1/2} nu(|v|/sqrt(theta))``.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numba as nb
import numpy as np
import scipy.linalg as sla
from scipy.special import erf

from .grid import Sector, VelocityGrid
from .maxwell import WeightSpec, burnett, weight_w

SQ2PI = np.sqrt(2 * np.pi)


def collision_frequency(v) -> np.ndarray:
    """nu(v) = 2 pi E|v - Z|, Z standard normal, in closed form.  Accepts a
    3-vector, an array of 3-vectors, or speeds via ``collision_frequency_speed``."""
    v = np.asarray(v, dtype=float)
    return collision_frequency_speed(np.sqrt(np.sum(v * v, axis=-1)))


def collision_frequency_speed(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    safe = np.where(s < 1e-6, 1.0, s)
    big = (safe + 1 / safe) * erf(safe / np.sqrt(2)) + np.sqrt(2 / np.pi) * np.exp(-safe ** 2 / 2)
    # series at the origin: E|Z-v| = 2 sqrt(2/pi) (1 + s^2/6 + ...)
    small = 2 * np.sqrt(2 / np.pi) * (1 + s ** 2 / 6)
    return 2 * np.pi * np.where(s < 1e-6, small, big)


def mean_free_path() -> float:
    """<|v|>_mu / <nu>_mu, the mean free path of the unit Maxwellian in the
    length unit of ``v1 d/dy + L`` (fine radial trapezoid rule)."""
    s = np.linspace(0.0, 12.0, 24001)
    radial = 4 * np.pi * s * s * np.exp(-s * s / 2) / (2 * np.pi) ** 1.5
    nu = collision_frequency_speed(s)
    return float(np.trapezoid(s * radial, s) / np.trapezoid(nu * radial, s))


@nb.njit(cache=True, inline="always")
def _k(v1, v2, v3, u1, u2, u3):
    d1 = v1 - u1
    d2 = v2 - u2
    d3 = v3 - u3
    r2 = d1 * d1 + d2 * d2 + d3 * d3
    r = np.sqrt(r2)
    vv = v1 * v1 + v2 * v2 + v3 * v3
    uu = u1 * u1 + u2 * u2 + u3 * u3
    a = vv - uu
    k1 = r * np.exp(-(vv + uu) / 4) / 2.5066282746310002
    k2 = 4.0 / 2.5066282746310002 / r * np.exp(-r2 / 8 - a * a / (8 * r2))
    return k2 - k1


def grad_kernel(v, u) -> np.ndarray:
    """k(v,u) for v != u (broadcasting over leading axes)."""
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    d = v - u
    r2 = np.sum(d * d, axis=-1)
    if np.any(r2 == 0):
        raise ValueError("grad_kernel is singular on the diagonal v = u")
    r = np.sqrt(r2)
    vv = np.sum(v * v, axis=-1)
    uu = np.sum(u * u, axis=-1)
    k1 = r * np.exp(-(vv + uu) / 4) / SQ2PI
    k2 = 4 / SQ2PI / r * np.exp(-r2 / 8 - (vv - uu) ** 2 / (8 * r2))
    return k2 - k1


def k1_envelope(v, u) -> np.ndarray:
    """Right side of the pointwise kernel bound without its constant."""
    d = np.asarray(v) - np.asarray(u)
    r2 = np.sum(d * d, axis=-1)
    r = np.sqrt(r2)
    a = np.sum(np.asarray(v) ** 2, axis=-1) - np.sum(np.asarray(u) ** 2, axis=-1)
    return (r + 1 / r) * np.exp(-r2 / 8 - a * a / (8 * r2))


@nb.njit(cache=True)
def _kernel_rows(vout, vall, wall, scale, sub):
    """Weighted kernel rows K[i, j] = k_theta(vout_i, vall_j) w_j where
    k_theta(v,u) = theta^{-1} k(v/s, u/s), s = sqrt(theta), passed as
    ``scale = s``.  Coincident nodes use the mean of k over the 8 points
    v + (+-sub, +-sub, +-sub), i.e. a cell average of the integrable singularity."""
    n_out = vout.shape[0]
    n = vall.shape[0]
    out = np.empty((n_out, n))
    inv = 1.0 / scale
    pref = inv * inv
    for i in range(n_out):
        a1 = vout[i, 0] * inv
        a2 = vout[i, 1] * inv
        a3 = vout[i, 2] * inv
        for j in range(n):
            b1 = vall[j, 0] * inv
            b2 = vall[j, 1] * inv
            b3 = vall[j, 2] * inv
            if a1 == b1 and a2 == b2 and a3 == b3:
                acc = 0.0
                d = sub * inv
                for s1 in (-1.0, 1.0):
                    for s2 in (-1.0, 1.0):
                        for s3 in (-1.0, 1.0):
                            acc += _k(a1, a2, a3, a1 + s1 * d, a2 + s2 * d, a3 + s3 * d)
                out[i, j] = pref * acc / 8.0 * wall[j]
            else:
                out[i, j] = pref * _k(a1, a2, a3, b1, b2, b3) * wall[j]
    return out


def kernel_rows(grid: VelocityGrid, rows: np.ndarray, theta: float = 1.0) -> np.ndarray:
    """Weighted kernel rows of K (sqrt(M_theta)-normalized, unit density) at the
    velocity nodes ``grid.nodes[rows]``."""
    return _kernel_rows(np.ascontiguousarray(grid.nodes[rows]), grid.nodes, grid.weights,
                        np.sqrt(theta), grid.spacing / 4)


def kernel_block(grid: VelocityGrid, rows: np.ndarray, theta: float = 1.0,
                 diagonal: str = "consistent") -> np.ndarray:
    """Weighted kernel rows with the chosen treatment of the self-interaction
    entry: ``subsample`` keeps the 8-point cell average, ``consistent``
    replaces it so that K sqrt(M) = nu sqrt(M) row by row."""
    rows = np.asarray(rows)
    block = kernel_rows(grid, rows, theta)
    if diagonal == "subsample":
        return block
    if diagonal != "consistent":
        raise ValueError(f"unknown diagonal mode {diagonal!r}")
    sq = maxwellian_sqrt(grid.nodes, theta)
    ii = np.arange(rows.size)
    sub = block[ii, rows].copy()
    block[ii, rows] = 0.0
    speed = np.sqrt(grid.speed2[rows])
    nu = np.sqrt(theta) * collision_frequency_speed(speed / np.sqrt(theta))
    fit = nu - (block @ sq) / sq[rows]
    # outside the inscribed ball the truncated box spoils the row sums;
    # taper back to the cell average there
    t = np.clip((speed - 0.8 * grid.v_max) / (0.2 * grid.v_max), 0.0, 1.0)
    taper = np.cos(0.5 * np.pi * t) ** 2
    block[ii, rows] = taper * fit + (1 - taper) * sub
    return block


def maxwellian_sqrt(nodes: np.ndarray, theta: float = 1.0) -> np.ndarray:
    """sqrt of the unit-density, zero-velocity Maxwellian at temperature theta."""
    s = np.sum(nodes * nodes, axis=-1)
    return np.exp(-s / (4 * theta)) / (2 * np.pi * theta) ** 0.75


def sector_invariants(sector: Sector, theta: float = 1.0) -> np.ndarray:
    """Collision invariants sqrt(M_theta)*(1, v, |v|^2) that live in the sector,
    as rows of reduced vectors."""
    v = sector.nodes
    sq = maxwellian_sqrt(v, theta)
    s = np.sum(v * v, axis=1)
    if sector.name == "full":
        rows = [sq, v[:, 0] * sq, v[:, 1] * sq, v[:, 2] * sq, s * sq]
    elif sector.name == "axisym":
        rows = [sq, v[:, 0] * sq, s * sq]
    elif sector.name == "odd2":
        rows = [v[:, 1] * sq]
    else:
        rows = [v[:, 2] * sq]
    return np.array(rows)


# -- binary cache -----------------------------------------------------------

_MAGIC = b"KSLKERN1"
_SECTOR_CODE = {"full": 0, "axisym": 1, "odd2": 2, "odd3": 3}
_DIAG_CODE = {"consistent": 0, "subsample": 1}


def cache_dir() -> Path | None:
    d = os.environ.get("KINSLAB_CACHE_DIR")
    return Path(d) if d else None


def _cache_path(grid, sector, theta, diagonal) -> Path | None:
    root = cache_dir()
    if root is None:
        return None
    key = f"{grid.kind}-{grid.points_per_axis}-{grid.v_max!r}-{sector}-{theta!r}-{diagonal}"
    return root / f"kernel-{hashlib.sha256(key.encode()).hexdigest()[:20]}.bin"


def write_kernel_cache(path: Path, grid: VelocityGrid, sector: str, theta: float,
                       diagonal: str, matrix: np.ndarray) -> None:
    """Header (magic, N, V_max, theta, subsampling level, sector, diagonal mode,
    shape) followed by the matrix as little-endian float64 in C order."""
    path.parent.mkdir(parents=True, exist_ok=True)
    head = _MAGIC + struct.pack("<iddiiiqq", grid.points_per_axis, grid.v_max, theta, 8,
                                _SECTOR_CODE[sector], _DIAG_CODE[diagonal], *matrix.shape)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(matrix, dtype="<f8").tobytes())
    os.replace(tmp, path)


def read_kernel_cache(path: Path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a kernel cache file")
    n, vmax, theta, sub, sec, dg, r, c = struct.unpack_from("<iddiiiqq", raw, 8)
    off = 8 + struct.calcsize("<iddiiiqq")
    mat = np.frombuffer(raw, dtype="<f8", count=r * c, offset=off).reshape(r, c).copy()
    meta = {"N": n, "V_max": vmax, "theta": theta, "subsampling": sub, "sector": sec, "diagonal": dg}
    return meta, mat


def _reduced_kernel(grid: VelocityGrid, sector: Sector, theta: float, diagonal: str) -> np.ndarray:
    path = _cache_path(grid, sector.name, theta, diagonal)
    if path is not None and path.exists():
        _, mat = read_kernel_cache(path)
        if mat.shape == (sector.size, sector.size):
            return mat
    rows = kernel_block(grid, sector.reps, theta, diagonal)
    mat = sector.reduce_rows(rows)
    if path is not None:
        write_kernel_cache(path, grid, sector.name, theta, diagonal, mat)
    return mat


class InversionError(RuntimeError):
    pass


@dataclass
class InverseReport:
    residual: float
    kernel_component: float


class LinearizedOperator:
    """Discrete ``L = nu - K`` for the Maxwellian M[rho, 0, theta] acting on
    sqrt(M)-normalized profiles in a symmetry sector.

    With ``conservative=True`` the operator is replaced by (I-P) L (I-P), P the
    grid-orthogonal projection on the collision invariants of the sector.  This
    keeps L self-adjoint and makes the invariants exact null vectors.
    """

    def __init__(self, grid: VelocityGrid, sector: str | Sector = "full", theta: float = 1.0,
                 rho: float = 1.0, conservative: bool = True, diagonal: str = "consistent"):
        self.grid = grid
        self.sector = sector if isinstance(sector, Sector) else Sector(grid, sector)
        self.theta = float(theta)
        self.rho = float(rho)
        s = self.sector
        self.K = rho * _reduced_kernel(grid, s, self.theta, diagonal)
        speed = np.sqrt(np.sum(s.nodes ** 2, axis=1))
        self.nu = rho * np.sqrt(self.theta) * collision_frequency_speed(speed / np.sqrt(self.theta))
        self.raw = np.diag(self.nu) - self.K
        self.invariants = sector_invariants(s, self.theta)
        w = s.weights
        sw = np.sqrt(w)
        q, _ = np.linalg.qr((sw[:, None] * self.invariants.T))
        self._q = q  # orthonormal basis of D^{1/2} * invariants
        sym = sw[:, None] * self.raw / sw[None, :]
        sym = 0.5 * (sym + sym.T)
        if conservative:
            aq = sym @ q
            qaq = q.T @ aq
            sym = sym - aq @ q.T - q @ aq.T + q @ qaq @ q.T
            sym = 0.5 * (sym + sym.T)
        self._sym = sym
        self.matrix = sym * sw[None, :] / sw[:, None]
        self._chol = None

    @property
    def size(self) -> int:
        return self.sector.size

    def inner(self, f, g):
        return np.sum(f * g * self.sector.weights, axis=-1)

    def apply(self, h: np.ndarray) -> np.ndarray:
        return h @ self.matrix.T

    def project_kernel(self, h: np.ndarray) -> np.ndarray:
        """Grid-orthogonal projection on the discrete collision invariants."""
        sw = np.sqrt(self.sector.weights)
        c = (h * sw) @ self._q
        return (c @ self._q.T) / sw

    def invert(self, g: np.ndarray, tol: float = 1e-9, kernel_tol: float = 1e-8,
               return_report: bool = False):
        """Solve L f = g with P f = 0.  ``g`` must be (numerically) orthogonal to
        the collision invariants."""
        g = np.asarray(g, dtype=float)
        sw = np.sqrt(self.sector.weights)
        gn = np.linalg.norm(g * sw, axis=-1)
        kc = np.linalg.norm(self.project_kernel(g) * sw, axis=-1)
        scale = np.where(gn > 0, gn, 1.0)
        if np.any(kc > kernel_tol * scale):
            raise InversionError(f"datum has a kernel component {float(np.max(kc / scale)):.3e} (relative)")
        if self._chol is None:
            shift = float(np.mean(self.nu))
            self._chol = sla.cho_factor(self._sym + shift * self._q @ self._q.T)
        x = sla.cho_solve(self._chol, (g * sw).T).T
        f = x / sw
        f = f - self.project_kernel(f)
        res = np.linalg.norm((self.apply(f) - g) * sw, axis=-1) / scale
        if np.any(res > tol):
            raise InversionError(f"inversion residual {float(np.max(res)):.3e} exceeds {tol:.1e}")
        if return_report:
            return f, InverseReport(float(np.max(res)), float(np.max(kc / scale)))
        return f

    def in_normalization(self, theta_ref: float) -> np.ndarray:
        """Matrix of h -> mu_ref^{-1/2} L_M (mu_ref^{1/2} h), mu_ref the unit
        Maxwellian at temperature theta_ref."""
        t = maxwellian_sqrt(self.sector.nodes, self.theta) / maxwellian_sqrt(self.sector.nodes, theta_ref)
        return t[:, None] * self.matrix / t[None, :]


# -- nonlinear collision operator ---------------------------------------------
#
# With sigma the unit vector of the post-collisional relative velocity,
# v' = c + r sigma, u' = c - r sigma, c = (v+u)/2, r = |v-u|/2, the hard-sphere
# kernel becomes isotropic: int_{S^2} |V.w| f dw = (|V|/2) int_{S^2} f(sigma) dsigma.
# Arguments are carried as g = F/E with a Maxwellian envelope
# E(v) = exp(-p|v|^2/(2 theta)); E(u')E(v') = E(u)E(v) holds exactly, so only
# the smooth ratios g are interpolated at off-grid points (tricubic Lagrange by
# default; trilinear interpolation is biased on convex ratios at coarse spacing).


@nb.njit(cache=True, inline="always")
def _interp(g, x, y, z, lo, inv_h, n):
    tx = (x - lo) * inv_h
    ty = (y - lo) * inv_h
    tz = (z - lo) * inv_h
    ix = int(np.floor(tx))
    iy = int(np.floor(ty))
    iz = int(np.floor(tz))
    if ix < 0:
        ix = 0
    elif ix > n - 2:
        ix = n - 2
    if iy < 0:
        iy = 0
    elif iy > n - 2:
        iy = n - 2
    if iz < 0:
        iz = 0
    elif iz > n - 2:
        iz = n - 2
    fx = min(max(tx - ix, 0.0), 1.0)
    fy = min(max(ty - iy, 0.0), 1.0)
    fz = min(max(tz - iz, 0.0), 1.0)
    c00 = g[ix, iy, iz] * (1 - fz) + g[ix, iy, iz + 1] * fz
    c01 = g[ix, iy + 1, iz] * (1 - fz) + g[ix, iy + 1, iz + 1] * fz
    c10 = g[ix + 1, iy, iz] * (1 - fz) + g[ix + 1, iy, iz + 1] * fz
    c11 = g[ix + 1, iy + 1, iz] * (1 - fz) + g[ix + 1, iy + 1, iz + 1] * fz
    c0 = c00 * (1 - fy) + c01 * fy
    c1 = c10 * (1 - fy) + c11 * fy
    return c0 * (1 - fx) + c1 * fx


@nb.njit(cache=True, inline="always")
def _w4(t):
    # cubic Lagrange weights for nodes -1, 0, 1, 2 at offset t in [0, 1]
    tm = t - 1.0
    tp = t + 1.0
    t2 = t - 2.0
    return (-t * tm * t2 / 6.0, tp * tm * t2 / 2.0, -tp * t * t2 / 2.0, tp * t * tm / 6.0)


@nb.njit(cache=True, inline="always")
def _interp3(g, x, y, z, lo, inv_h, n):
    tx = (x - lo) * inv_h
    ty = (y - lo) * inv_h
    tz = (z - lo) * inv_h
    ix = min(max(int(np.floor(tx)), 1), n - 3)
    iy = min(max(int(np.floor(ty)), 1), n - 3)
    iz = min(max(int(np.floor(tz)), 1), n - 3)
    fx = min(max(tx - ix, -1.0), 2.0)
    fy = min(max(ty - iy, -1.0), 2.0)
    fz = min(max(tz - iz, -1.0), 2.0)
    wx = _w4(fx)
    wy = _w4(fy)
    wz = _w4(fz)
    acc = 0.0
    for a in range(4):
        sa = 0.0
        for b in range(4):
            row = g[ix - 1 + a, iy - 1 + b]
            sb = (wz[0] * row[iz - 1] + wz[1] * row[iz] + wz[2] * row[iz + 1] + wz[3] * row[iz + 2])
            sa += wy[b] * sb
        acc += wx[a] * sa
    return acc


@nb.njit(cache=True, inline="always")
def _pick(g, x, y, z, lo, inv_h, n, order):
    if order == 3:
        return _interp3(g, x, y, z, lo, inv_h, n)
    return _interp(g, x, y, z, lo, inv_h, n)


@nb.njit(cache=True)
def _gain(vout, eout, vall, wE, ga, gb, lo, inv_h, n, sig, wsig, symmetric, same, keep, order):
    """Gain term at the output nodes.

    ``wE[j] = w_j E(u_j)``; ``eout[i] = E(v_i)``.  With ``symmetric`` the sphere
    nodes come in antipodal pairs and only the first half is visited; the
    result is then the gain part of Q(a,b)+Q(b,a).
    ``keep[i, j]`` is false for pairs pruned by the envelope product.
    """
    n_out = vout.shape[0]
    m = sig.shape[0]
    out = np.zeros(n_out)
    for i in range(n_out):
        v1 = vout[i, 0]
        v2 = vout[i, 1]
        v3 = vout[i, 2]
        acc = 0.0
        for j in range(vall.shape[0]):
            if not keep[i, j]:
                continue
            u1 = vall[j, 0]
            u2 = vall[j, 1]
            u3 = vall[j, 2]
            c1 = 0.5 * (v1 + u1)
            c2 = 0.5 * (v2 + u2)
            c3 = 0.5 * (v3 + u3)
            d1 = v1 - u1
            d2 = v2 - u2
            d3 = v3 - u3
            r = 0.5 * np.sqrt(d1 * d1 + d2 * d2 + d3 * d3)
            if r == 0.0:
                continue
            s = 0.0
            for k in range(m):
                x1 = r * sig[k, 0]
                x2 = r * sig[k, 1]
                x3 = r * sig[k, 2]
                a_up = _pick(ga, c1 - x1, c2 - x2, c3 - x3, lo, inv_h, n, order)
                b_vp = _pick(gb, c1 + x1, c2 + x2, c3 + x3, lo, inv_h, n, order)
                if same:
                    s += 4.0 * wsig[k] * a_up * b_vp
                elif symmetric:
                    a_vp = _pick(ga, c1 + x1, c2 + x2, c3 + x3, lo, inv_h, n, order)
                    b_up = _pick(gb, c1 - x1, c2 - x2, c3 - x3, lo, inv_h, n, order)
                    s += 2.0 * wsig[k] * (a_up * b_vp + a_vp * b_up)
                else:
                    s += wsig[k] * a_up * b_vp
            acc += wE[j] * r * s
        out[i] = eout[i] * acc
    return out


@nb.njit(cache=True, inline="always")
def _stencil(x, y, z, lo, inv_h, n, idx, wts):
    # tricubic stencil: flat node indices and weights of the 64 points
    tx = (x - lo) * inv_h
    ty = (y - lo) * inv_h
    tz = (z - lo) * inv_h
    ix = min(max(int(np.floor(tx)), 1), n - 3)
    iy = min(max(int(np.floor(ty)), 1), n - 3)
    iz = min(max(int(np.floor(tz)), 1), n - 3)
    wx = _w4(min(max(tx - ix, -1.0), 2.0))
    wy = _w4(min(max(ty - iy, -1.0), 2.0))
    wz = _w4(min(max(tz - iz, -1.0), 2.0))
    p = 0
    for a in range(4):
        for b in range(4):
            wab = wx[a] * wy[b]
            base = ((ix - 1 + a) * n + (iy - 1 + b)) * n + iz - 1
            for c in range(4):
                idx[p] = base + c
                wts[p] = wab * wz[c]
                p += 1


@nb.njit(cache=True, fastmath=True)
def _gain_many(vout, eout, vall, wE, ga, gb, lo, inv_h, n, sig, wsig, keep):
    """Gain part of Q(a_b, b_b) + Q(b_b, a_b) for a batch of field pairs.

    ``ga``, ``gb`` are (n^3, B) envelope ratios, ``eout`` (n_out, B) and
    ``wE`` (n^3, B) the per-field envelopes; the stencils are shared by the
    whole batch.
    """
    n_out = vout.shape[0]
    B = ga.shape[1]
    m = sig.shape[0]
    out = np.zeros((n_out, B))
    acc = np.empty(B)
    s = np.empty(B)
    au = np.empty(B)
    bu = np.empty(B)
    av = np.empty(B)
    bv = np.empty(B)
    i1 = np.empty(64, np.int64)
    w1 = np.empty(64)
    i2 = np.empty(64, np.int64)
    w2 = np.empty(64)
    for i in range(n_out):
        acc[:] = 0.0
        for j in range(vall.shape[0]):
            if not keep[i, j]:
                continue
            c1 = 0.5 * (vout[i, 0] + vall[j, 0])
            c2 = 0.5 * (vout[i, 1] + vall[j, 1])
            c3 = 0.5 * (vout[i, 2] + vall[j, 2])
            d1 = vout[i, 0] - vall[j, 0]
            d2 = vout[i, 1] - vall[j, 1]
            d3 = vout[i, 2] - vall[j, 2]
            r = 0.5 * np.sqrt(d1 * d1 + d2 * d2 + d3 * d3)
            if r == 0.0:
                continue
            s[:] = 0.0
            for k in range(m):
                x1 = r * sig[k, 0]
                x2 = r * sig[k, 1]
                x3 = r * sig[k, 2]
                _stencil(c1 - x1, c2 - x2, c3 - x3, lo, inv_h, n, i1, w1)
                _stencil(c1 + x1, c2 + x2, c3 + x3, lo, inv_h, n, i2, w2)
                au[:] = 0.0
                bu[:] = 0.0
                av[:] = 0.0
                bv[:] = 0.0
                for p in range(64):
                    q1 = i1[p]
                    q2 = i2[p]
                    wa = w1[p]
                    wb = w2[p]
                    for t in range(B):
                        au[t] += wa * ga[q1, t]
                        bu[t] += wa * gb[q1, t]
                        av[t] += wb * ga[q2, t]
                        bv[t] += wb * gb[q2, t]
                wk = 2.0 * wsig[k]
                for t in range(B):
                    s[t] += wk * (au[t] * bv[t] + av[t] * bu[t])
            for t in range(B):
                acc[t] += wE[j, t] * r * s[t]
        for t in range(B):
            out[i, t] = eout[i, t] * acc[t]
    return out


@dataclass
class Envelope:
    theta: float = 1.0
    power: float = 1.0

    def __call__(self, nodes: np.ndarray) -> np.ndarray:
        return np.exp(-self.power * np.sum(nodes * nodes, axis=-1) / (2 * self.theta))


def fit_envelope(*fields_and_grid) -> Envelope:
    """Envelope at the temperature of the combined field (falls back to 1)."""
    *fields, grid = fields_and_grid
    tot = sum(np.abs(f) for f in fields)
    mass = grid.integrate(tot)
    if mass <= 0:
        return Envelope()
    theta = grid.integrate(tot * grid.speed2) / (3 * mass)
    return Envelope(theta=float(min(max(theta, 0.2), 5.0)), power=1.0)


def _collision_sphere(n_polar: int, n_azimuth: int):
    from .grid import build_sphere_quadrature
    return build_sphere_quadrature(n_polar, n_azimuth)


class CollisionIntegral:
    """Deterministic quadrature of the bilinear hard-sphere collision operator
    on a velocity grid.

    ``Q(F1, F2)(v) = int int |(v-u).w| [F1(u')F2(v') - F1(u)F2(v)] dw du``.
    Outputs may be restricted to a subset of nodes (e.g. sector
    representatives); the optional conservative correction subtracts
    E*(a + b.v + c|v|^2) so that the discrete mass, momentum and energy of the
    output vanish.
    """

    def __init__(self, grid: VelocityGrid, n_polar: int = 16, n_azimuth: int = 32,
                 prune: float = 1e-14, order: int = 3):
        if order not in (1, 3):
            raise ValueError("interpolation order must be 1 (trilinear) or 3 (tricubic)")
        self.grid = grid
        self.order = order
        self.sphere = _collision_sphere(n_polar, n_azimuth)
        sp = self.sphere
        # one representative of every antipodal pair
        half = np.array([k for k in range(sp.size) if k < sp.antipode[k]])
        self._half = half
        self.prune = prune
        self._n = grid.points_per_axis

    def _loss_rate(self, F: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """2 pi sum_u w_u |v-u| F(u) at the output nodes."""
        v = self.grid.nodes
        out = np.empty(rows.size)
        wf = self.grid.weights * F
        for a in range(0, rows.size, 256):
            r = rows[a:a + 256]
            d = np.sqrt(np.sum((v[r][:, None, :] - v[None, :, :]) ** 2, axis=-1))
            out[a:a + 256] = d @ wf
        return 2 * np.pi * out

    def _keep(self, env: Envelope, rows: np.ndarray) -> np.ndarray:
        e = env(self.grid.nodes)
        return (e[rows][:, None] * e[None, :]) >= self.prune * float(np.max(e)) ** 2

    def gain(self, F1, F2, rows=None, envelope: Envelope | None = None, symmetric=False):
        g = self.grid
        rows = np.arange(g.size) if rows is None else np.asarray(rows)
        env = envelope or fit_envelope(F1, F2, g)
        e = env(g.nodes)
        n = self._n
        ga = (F1 / e).reshape(n, n, n)
        gb = (F2 / e).reshape(n, n, n)
        sp = self.sphere
        if symmetric:
            sig, wsig = sp.nodes[self._half], sp.weights[self._half]
        else:
            sig, wsig = sp.nodes, sp.weights
        return _gain(np.ascontiguousarray(g.nodes[rows]), e[rows], g.nodes, g.weights * e,
                     np.ascontiguousarray(ga), np.ascontiguousarray(gb), float(g.axis[0]),
                     1.0 / g.spacing, n, np.ascontiguousarray(sig), wsig, symmetric,
                     symmetric and F1 is F2, self._keep(env, rows), self.order)

    def __call__(self, F1, F2, rows=None, envelope=None, conservative=True, sector=None):
        """Q(F1, F2) at ``grid.nodes[rows]`` (all nodes by default).  When
        ``sector`` is given, the output rows are its representatives and the
        conservative correction uses the sector quadrature weights."""
        rows = self._rows(rows, sector)
        env = envelope or fit_envelope(F1, F2, self.grid)
        q = self.gain(F1, F2, rows, env) - F2[rows] * self._loss_rate(F1, rows)
        return self._correct(q, rows, sector, env) if conservative else q

    def symmetric(self, F1, F2, rows=None, envelope=None, conservative=True, sector=None):
        """Q(F1, F2) + Q(F2, F1), using the antipodal symmetry of the sphere rule."""
        rows = self._rows(rows, sector)
        env = envelope or fit_envelope(F1, F2, self.grid)
        q = (self.gain(F1, F2, rows, env, symmetric=True)
             - F2[rows] * self._loss_rate(F1, rows) - F1[rows] * self._loss_rate(F2, rows))
        return self._correct(q, rows, sector, env) if conservative else q

    def symmetric_many(self, F1, F2, sector: Sector, envelopes=None, conservative=True,
                       batch: int = 32) -> np.ndarray:
        """Q(F1[b], F2[b]) + Q(F2[b], F1[b]) on the sector representatives for
        stacks of full-grid fields (B, n^3); returns (B, n_reduced).

        ``envelopes`` is one Envelope per field pair (fitted when omitted).
        Always tricubic."""
        g = self.grid
        F1 = np.atleast_2d(np.asarray(F1, dtype=float))
        F2 = np.atleast_2d(np.asarray(F2, dtype=float))
        nb_ = F1.shape[0]
        if envelopes is None:
            envelopes = [fit_envelope(F1[b], F2[b], g) for b in range(nb_)]
        rows = sector.reps
        n = self._n
        sp = self.sphere
        sig, wsig = np.ascontiguousarray(sp.nodes[self._half]), sp.weights[self._half]
        D = self._distances(rows)
        out = np.empty((nb_, rows.size))
        for a in range(0, nb_, batch):
            sl = slice(a, min(a + batch, nb_))
            envs = envelopes[sl]
            E = np.stack([env(g.nodes) for env in envs], axis=1)
            widest = max(envs, key=lambda env: env.theta / env.power)
            gain = _gain_many(np.ascontiguousarray(g.nodes[rows]), np.ascontiguousarray(E[rows]), g.nodes,
                              np.ascontiguousarray(g.weights[:, None] * E),
                              np.ascontiguousarray(F1[sl].T / E), np.ascontiguousarray(F2[sl].T / E),
                              float(g.axis[0]), 1.0 / g.spacing, n, sig, wsig, self._keep(widest, rows))
            loss1 = 2 * np.pi * D @ (g.weights[:, None] * F1[sl].T)
            loss2 = 2 * np.pi * D @ (g.weights[:, None] * F2[sl].T)
            q = (gain - F2[sl].T[rows] * loss1 - F1[sl].T[rows] * loss2).T
            if conservative:
                for b, env in enumerate(envs):
                    q[b] = self._correct(q[b], rows, sector, env)
            out[sl] = q
        return out

    def _distances(self, rows):
        key = rows.tobytes()
        cache = self.__dict__.setdefault("_dist_cache", {})
        if key not in cache:
            v = self.grid.nodes
            cache.clear()
            cache[key] = np.sqrt(np.sum((v[rows][:, None, :] - v[None, :, :]) ** 2, axis=-1))
        return cache[key]

    def _rows(self, rows, sector):
        if sector is not None:
            return sector.reps
        return np.arange(self.grid.size) if rows is None else np.asarray(rows)

    def _correct(self, q, rows, sector, env):
        g = self.grid
        if sector is None:
            if rows.size != g.size:
                return q
            v, w = g.nodes, g.weights
            basis = np.stack([np.ones(len(v)), v[:, 0], v[:, 1], v[:, 2], np.sum(v * v, 1)])
        else:
            v, w = sector.nodes, sector.weights
            basis = sector_invariants(sector, 1.0) / maxwellian_sqrt(v, 1.0)
        e = Envelope(env.theta, 1.0)(v)
        A = (basis * w) @ (basis * e).T
        # q is (..., out); every leading index is corrected separately
        coef = np.linalg.lstsq(A, (basis * w) @ q.T, rcond=None)[0]
        return q - (coef.T @ basis) * e


@nb.njit(cache=True)
def _bilinear_rows(vout, iout, eout, vall, wE, einv, ga, lo, inv_h, n, sig, wsig, keep, order):
    """Gain part of F -> Q(a,F) + Q(F,a) as dense rows over the grid nodes
    (sphere nodes are one representative per antipodal pair)."""
    n_out = vout.shape[0]
    nn = vall.shape[0]
    m = sig.shape[0]
    rows = np.zeros((n_out, nn))
    for i in range(n_out):
        v1 = vout[i, 0]
        v2 = vout[i, 1]
        v3 = vout[i, 2]
        for j in range(nn):
            if not keep[i, j]:
                continue
            u1 = vall[j, 0]
            u2 = vall[j, 1]
            u3 = vall[j, 2]
            c1 = 0.5 * (v1 + u1)
            c2 = 0.5 * (v2 + u2)
            c3 = 0.5 * (v3 + u3)
            d1 = v1 - u1
            d2 = v2 - u2
            d3 = v3 - u3
            r = 0.5 * np.sqrt(d1 * d1 + d2 * d2 + d3 * d3)
            if r == 0.0:
                continue
            base = 2.0 * eout[i] * wE[j] * r
            for k in range(m):
                x1 = r * sig[k, 0]
                x2 = r * sig[k, 1]
                x3 = r * sig[k, 2]
                for side in (-1.0, 1.0):
                    # a at c + side*x, F interpolated at c - side*x
                    a_val = _pick(ga, c1 + side * x1, c2 + side * x2, c3 + side * x3, lo, inv_h, n, order)
                    coef = base * wsig[k] * a_val
                    if coef == 0.0:
                        continue
                    tx = (c1 - side * x1 - lo) * inv_h
                    ty = (c2 - side * x2 - lo) * inv_h
                    tz = (c3 - side * x3 - lo) * inv_h
                    if order == 3:
                        ix = min(max(int(np.floor(tx)), 1), n - 3)
                        iy = min(max(int(np.floor(ty)), 1), n - 3)
                        iz = min(max(int(np.floor(tz)), 1), n - 3)
                        px = _w4(min(max(tx - ix, -1.0), 2.0))
                        py = _w4(min(max(ty - iy, -1.0), 2.0))
                        pz = _w4(min(max(tz - iz, -1.0), 2.0))
                        for ax in range(4):
                            for ay in range(4):
                                cxy = coef * px[ax] * py[ay]
                                base_node = ((ix - 1 + ax) * n + (iy - 1 + ay)) * n + iz - 1
                                for az in range(4):
                                    node = base_node + az
                                    rows[i, node] += cxy * pz[az] * einv[node]
                        continue
                    ix = min(max(int(np.floor(tx)), 0), n - 2)
                    iy = min(max(int(np.floor(ty)), 0), n - 2)
                    iz = min(max(int(np.floor(tz)), 0), n - 2)
                    fx = min(max(tx - ix, 0.0), 1.0)
                    fy = min(max(ty - iy, 0.0), 1.0)
                    fz = min(max(tz - iz, 0.0), 1.0)
                    for ax in range(2):
                        wx = fx if ax else 1.0 - fx
                        for ay in range(2):
                            wy = fy if ay else 1.0 - fy
                            for az in range(2):
                                wz = fz if az else 1.0 - fz
                                node = ((ix + ax) * n + (iy + ay)) * n + (iz + az)
                                rows[i, node] += coef * wx * wy * wz * einv[node]
    return rows


def _bilinear_matrix(self, A, rows=None, envelope=None, sector=None, conservative=True):
    """Matrix of F -> Q(A,F) + Q(F,A) at the output rows.  With ``sector`` the
    result acts on (and returns) reduced vectors."""
    g = self.grid
    out_rows = self._rows(rows, sector)
    env = envelope or fit_envelope(A, g)
    e = env(g.nodes)
    n = self._n
    sp = self.sphere
    sig, wsig = sp.nodes[self._half], sp.weights[self._half]
    ga = np.ascontiguousarray((A / e).reshape(n, n, n))
    R = _bilinear_rows(np.ascontiguousarray(g.nodes[out_rows]), out_rows, e[out_rows], g.nodes,
                       g.weights * e, 1.0 / e, ga, float(g.axis[0]), 1.0 / g.spacing, n,
                       np.ascontiguousarray(sig), wsig, self._keep(env, out_rows), self.order)
    # loss parts: F(v) * 2pi sum |v-u| A(u)  and  A(v) * 2pi sum |v-u| w_u F(u)
    R[np.arange(out_rows.size), out_rows] -= self._loss_rate(A, out_rows)
    v = g.nodes
    for a in range(0, out_rows.size, 256):
        r = out_rows[a:a + 256]
        d = np.sqrt(np.sum((v[r][:, None, :] - v[None, :, :]) ** 2, axis=-1))
        R[a:a + 256] -= 2 * np.pi * A[r][:, None] * d * g.weights[None, :]
    if sector is not None:
        R = sector.reduce_rows(R)
    if conservative:
        R = self._correct(R.T, out_rows, sector, env).T if sector is not None or out_rows.size == g.size else R
    return R


CollisionIntegral.bilinear_matrix = _bilinear_matrix


# -- scalar functions alpha, beta and the transport coefficients ---------------

BURNETT_SECTORS = {"A1": "axisym", "A2": "odd2", "A3": "odd3", "B": "axisym"}


@dataclass
class RadialTable:
    """Shell-wise factor on the distinct speeds of the grid; excluded shells
    carry NaN and are bridged by linear interpolation when evaluated."""

    radius: np.ndarray
    values: np.ndarray
    support: np.ndarray

    def __call__(self, r) -> np.ndarray:
        ok = self.support
        return np.interp(r, self.radius[ok], self.values[ok])

    @property
    def excluded(self) -> np.ndarray:
        return self.radius[~self.support]


def burnett_response(grid: VelocityGrid, kind: str, operator: LinearizedOperator | None = None):
    """Solve L h = (I-P) X sqrt(mu) for the Burnett function X in its sector.

    Returns (operator, X sqrt(mu), h) as reduced vectors.
    """
    L = operator or LinearizedOperator(grid, BURNETT_SECTORS[kind])
    d = burnett(kind, L.sector.nodes) * maxwellian_sqrt(L.sector.nodes)
    return L, d, L.invert(d - L.project_kernel(d))


def shell_factor(sector: Sector, datum: np.ndarray, h: np.ndarray, floor: float = 1e-3,
                 shell_floor: float = 1e-3) -> RadialTable:
    """Weighted least-squares factor c(r) with h ~ c(|v|) datum on every speed shell.

    Nodes where |datum| is below ``floor`` times the shell maximum are left
    out; shells whose polynomial part is below ``shell_floor`` of its global
    maximum are excluded entirely.
    """
    nodes = sector.nodes
    r2 = np.round(np.sum(nodes * nodes, axis=1), 9)
    shells, inv = np.unique(r2, return_inverse=True)
    poly = np.abs(datum / maxwellian_sqrt(nodes))
    shell_max = np.zeros(shells.size)
    np.maximum.at(shell_max, inv, poly)
    use = poly >= floor * shell_max[inv]
    w = sector.weights * use
    num = np.bincount(inv, w * h * datum, shells.size)
    den = np.bincount(inv, w * datum * datum, shells.size)
    support = (shell_max >= shell_floor * poly.max()) & (den > 0)
    values = np.full(shells.size, np.nan)
    values[support] = num[support] / den[support]
    return RadialTable(np.sqrt(shells), values, support)


@dataclass
class AlphaBeta:
    alpha: RadialTable
    beta: RadialTable
    alpha_A3: RadialTable
    alpha_A1: RadialTable
    reconstruction: dict
    responses: dict


def compute_alpha_beta(grid: VelocityGrid, operators: dict | None = None) -> AlphaBeta:
    """alpha(r), beta(r) from L^{-1}(A_j sqrt(mu)) = alpha A_j sqrt(mu) and
    L^{-1}(B sqrt(mu)) = beta B sqrt(mu).  alpha is extracted from A2, with A3
    and A1 kept as isotropy checks."""
    operators = dict(operators or {})
    tables, recon, responses = {}, {}, {}
    for kind in ("A2", "A3", "A1", "B"):
        sec = BURNETT_SECTORS[kind]
        L, d, h = burnett_response(grid, kind, operators.get(sec))
        operators[sec] = L
        t = shell_factor(L.sector, d, h)
        r = np.sqrt(np.sum(L.sector.nodes ** 2, axis=1))
        model = t(r) * d
        w = L.sector.weights
        recon[kind] = float(np.sqrt(np.sum(w * (model - h) ** 2) / np.sum(w * h * h)))
        tables[kind] = t
        responses[kind] = (L, d, h)
    return AlphaBeta(tables["A2"], tables["B"], tables["A3"], tables["A1"], recon, responses)


@dataclass
class TransportCoefficients:
    iota: float
    kappa: float
    iota_table: float
    kappa_table: float

    def viscosity(self, theta):
        return self.iota * np.sqrt(theta)

    def conductivity(self, theta):
        return self.kappa * np.sqrt(theta)


def transport_coefficients(grid: VelocityGrid, alpha_beta: AlphaBeta | None = None) -> TransportCoefficients:
    """iota = <A2 sqrt(mu), L^{-1} A2 sqrt(mu)>, kappa = <B sqrt(mu), L^{-1} B sqrt(mu)>,
    both directly and through the radial tables (int |X|^2 c(|v|) mu)."""
    ab = alpha_beta or compute_alpha_beta(grid)
    out = []
    for kind, table in (("A2", ab.alpha), ("B", ab.beta)):
        L, d, h = ab.responses[kind]
        s = L.sector
        direct = float(np.sum(s.weights * d * h))
        r = np.sqrt(np.sum(s.nodes ** 2, axis=1))
        via = float(np.sum(s.weights * d * d * table(r)))
        out.append((direct, via))
    (i_d, i_t), (k_d, k_t) = out
    if not (i_d > 0 and k_d > 0):
        raise ArithmeticError("transport coefficients are not positive; check the sign convention")
    return TransportCoefficients(i_d, k_d, i_t, k_t)


# -- structural checks: kernel bounds, frequency bounds, coercivity -----------


@nb.njit(cache=True)
def _bound_stats(vout, vall, wall, inv_w_all):
    n_out = vout.shape[0]
    ratio = np.zeros(n_out)
    rowsum = np.zeros(n_out)
    for i in range(n_out):
        v1, v2, v3 = vout[i, 0], vout[i, 1], vout[i, 2]
        sv = v1 * v1 + v2 * v2 + v3 * v3
        best = 0.0
        acc = 0.0
        for j in range(vall.shape[0]):
            u1, u2, u3 = vall[j, 0], vall[j, 1], vall[j, 2]
            d2 = (v1 - u1) ** 2 + (v2 - u2) ** 2 + (v3 - u3) ** 2
            if d2 == 0.0:
                continue
            d = np.sqrt(d2)
            su = u1 * u1 + u2 * u2 + u3 * u3
            k = abs(_k(v1, v2, v3, u1, u2, u3))
            env = (d + 1.0 / d) * np.exp(-d2 / 8.0 - (sv - su) ** 2 / (8.0 * d2))
            if env > 0.0 and k / env > best:
                best = k / env
            acc += wall[j] * k * inv_w_all[j]
        ratio[i] = best
        rowsum[i] = acc
    return ratio, rowsum


@dataclass
class KernelBounds:
    """Fitted constants: |k| <= c_k1 (d + 1/d) exp(...) on all node pairs,
    int |k(v,u)| / w(u) du <= c_k2 (1+|v|)^{-1} / w(v), and
    c_nu_lower (1+|v|) <= nu(v) <= c_nu_upper (1+|v|)."""

    c_k1: float
    c_k2: float
    c_nu_lower: float
    c_nu_upper: float


def kernel_bounds(grid: VelocityGrid, weight: WeightSpec | None = None) -> KernelBounds:
    weight = weight or WeightSpec()
    # both bounds are invariant under the reflections of the grid, so the
    # axisymmetric representatives cover every output node
    s = Sector(grid, "axisym")
    w_all = weight_w(weight, grid.nodes)
    ratio, rowsum = _bound_stats(np.ascontiguousarray(s.nodes), grid.nodes, grid.weights, 1.0 / w_all)
    speed = np.sqrt(np.sum(s.nodes ** 2, axis=1))
    k2 = rowsum * (1 + speed) * weight_w(weight, s.nodes)
    nu = collision_frequency_speed(np.sqrt(grid.speed2)) / (1 + np.sqrt(grid.speed2))
    return KernelBounds(float(ratio.max()), float(k2.max()), float(nu.min()), float(nu.max()))


def hermite_basis(nodes: np.ndarray, degree: int) -> np.ndarray:
    """Products He_a(v1) He_b(v2) He_c(v3) / sqrt(a! b! c!) with a+b+c <= degree,
    orthonormal under the standard Gaussian; rows are basis functions."""
    from math import factorial

    from numpy.polynomial.hermite_e import hermeval

    out = []
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                col = np.ones(nodes.shape[0])
                for axis, n in enumerate((a, b, c)):
                    coef = np.zeros(n + 1)
                    coef[n] = 1.0
                    col = col * hermeval(nodes[:, axis], coef) / np.sqrt(factorial(n))
                out.append(col)
    return np.array(out)


@dataclass
class Coercivity:
    c0: float
    subspace_min: float
    quotients: np.ndarray


def coercivity_constant(grid: VelocityGrid, n_samples: int = 200, degree: int = 4, seed: int = 0,
                        block: int = 512) -> Coercivity:
    """Smallest <Lh,h>/<nu h,h> over random smooth h with Ph = 0.

    h = sqrt(mu) * (random combination of normalized Hermite products of
    degree <= ``degree``), so the sample set does not depend on the grid.  L
    is applied matrix-free over the full grid in row blocks.
    """
    sq = maxwellian_sqrt(grid.nodes)
    H = hermite_basis(grid.nodes, degree) * sq  # (m, n)
    full = Sector(grid, "full")
    inv = sector_invariants(full)
    w = grid.weights
    q, _ = np.linalg.qr((np.sqrt(w)[:, None] * inv.T))
    Hs = H * np.sqrt(w)
    Hs = Hs - (Hs @ q) @ q.T
    H = Hs / np.sqrt(w)  # projected basis, (I-P) H
    nu = collision_frequency_speed(np.sqrt(grid.speed2))
    KH = np.empty_like(H)
    for a in range(0, grid.size, block):
        rows = np.arange(a, min(a + block, grid.size))
        KH[:, rows] = (kernel_block(grid, rows) @ H.T).T
    LH = nu * H - KH
    A = (H * w) @ LH.T
    A = 0.5 * (A + A.T)
    B = (H * w * nu) @ H.T
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((n_samples, H.shape[0]))
    quot = np.einsum("si,ij,sj->s", c, A, c) / np.einsum("si,ij,sj->s", c, B, c)
    # B is singular on the projected directions of the 5 invariants' span; drop them
    evals, evecs = np.linalg.eigh(B)
    keep = evals > 1e-10 * evals.max()
    T = evecs[:, keep] / np.sqrt(evals[keep])
    sub = float(np.linalg.eigvalsh(T.T @ A @ T).min())
    return Coercivity(float(quot.min()), sub, quot)
