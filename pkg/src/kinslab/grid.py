"""Velocity and spatial discretizations, and every quadrature rule used downstream."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

MOMENT_TOL = 1e-6


@dataclass(frozen=True)
class VelocityGrid:
    """Tensor-product velocity grid on [-V, V]^3.

    Nodes are stored flattened in C order of (i1, i2, i3), so ``nodes[k]`` has
    components ``axis[i1], axis[i2], axis[i3]`` with ``k = (i1*N + i2)*N + i3``.
    """

    axis: np.ndarray
    axis_weights: np.ndarray
    v_max: float
    points_per_axis: int
    kind: str = "trapezoid"
    moment_tol: float = MOMENT_TOL
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = self.axis
        g1, g2, g3 = np.meshgrid(a, a, a, indexing="ij")
        nodes = np.stack([g1.ravel(), g2.ravel(), g3.ravel()], axis=1)
        w = self.axis_weights
        weights = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.points_per_axis ** 3

    @property
    def spacing(self) -> float:
        return float(self.axis[1] - self.axis[0])

    @property
    def speed2(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.nodes, self.nodes)

    def integrate(self, f: np.ndarray) -> np.ndarray:
        """Quadrature over velocity along the last axis."""
        return f @ self.weights

    def index(self, i1, i2, i3):
        n = self.points_per_axis
        return (np.asarray(i1) * n + np.asarray(i2)) * n + np.asarray(i3)

    def permutation(self, signs=(1, 1, 1), swap23: bool = False) -> np.ndarray:
        """Index map k -> k' for the node transformation given by sign flips
        (and optionally exchanging v2 and v3).  ``f[perm]`` is f evaluated at
        the transformed velocity."""
        n = self.points_per_axis
        i = np.arange(n)
        idx = [i if s > 0 else i[::-1] for s in signs]
        i1, i2, i3 = np.meshgrid(*idx, indexing="ij")
        if swap23:
            i2, i3 = i3, i2
        return self.index(i1, i2, i3).ravel()

    def gaussian_moment_errors(self) -> dict:
        s = self.speed2
        mu = np.exp(-s / 2) / (2 * np.pi) ** 1.5
        w = self.weights
        return {
            "mass": abs(w @ mu - 1.0),
            "momentum": float(np.max(np.abs((self.nodes * mu[:, None]).T @ w))),
            "energy": abs(w @ (s * mu) - 3.0),
            "fourth": abs(w @ (s * s * mu) - 15.0),
        }


def build_velocity_grid(points_per_axis: int, V_max: float) -> VelocityGrid:
    """Trapezoidal tensor grid with an even number of points per axis, so that
    no node sits on the grazing set v1 = 0."""
    n = int(points_per_axis)
    if n != points_per_axis or n < 2 or n % 2:
        raise ValueError(f"points_per_axis must be an even integer >= 2, got {points_per_axis}")
    if not V_max >= 3.0:
        raise ValueError(f"V_max must be >= 3 (Maxwellian mass loss), got {V_max}")
    axis = np.linspace(-V_max, V_max, n)
    h = axis[1] - axis[0]
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return VelocityGrid(axis=axis, axis_weights=w, v_max=float(V_max), points_per_axis=n)


def build_gauss_hermite_grid(points_per_axis: int) -> VelocityGrid:
    """Gauss-Hermite alternative: nodes for the weight e^{-v^2/2}, with the
    Gaussian factor folded back into the weights so that plain functions are
    integrated.  Even counts keep v1 = 0 off the grid."""
    n = int(points_per_axis)
    if n % 2 or n < 2:
        raise ValueError("points_per_axis must be even")
    x, w = np.polynomial.hermite_e.hermegauss(n)
    w = w * np.exp(x * x / 2)
    return VelocityGrid(axis=x, axis_weights=w, v_max=float(x[-1]), points_per_axis=n, kind="gauss_hermite")


@dataclass(frozen=True)
class SpatialGrid:
    nodes: np.ndarray
    kind: str
    ratio: float = 1.0

    def __post_init__(self):
        x = self.nodes
        if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0):
            raise ValueError("spatial nodes must be strictly increasing")
        x.setflags(write=False)

    @property
    def length(self) -> float:
        return float(self.nodes[-1])

    @property
    def count(self) -> int:
        return self.nodes.size

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def trapezoid_weights(self) -> np.ndarray:
        d = self.widths
        w = np.zeros(self.count)
        w[:-1] += d / 2
        w[1:] += d / 2
        return w

    def integrate(self, f: np.ndarray) -> np.ndarray:
        """Trapezoidal integral over the spatial index (axis 0)."""
        return np.tensordot(self.trapezoid_weights, f, axes=(0, 0))


def _graded(length: float, n_int: int, h_end: float) -> np.ndarray:
    """Geometric spacings on [0, length] with n_int cells whose last cell has
    width close to h_end (first cell is the smallest)."""
    if n_int * h_end <= length:
        return np.linspace(0.0, length, n_int + 1)
    # a last cell wider than a quarter of the interval would make the grading abrupt
    h_end = min(h_end, 0.25 * length)

    def last_cell(q):
        return length * (q - 1) * q ** (n_int - 1) / (q ** n_int - 1) - h_end

    if last_cell(1.0 + 1e-12) >= 0:
        return np.linspace(0.0, length, n_int + 1)
    q = brentq(last_cell, 1.0 + 1e-12, 10.0)
    k = np.arange(n_int + 1)
    x = length * (q ** k - 1) / (q ** n_int - 1)
    x[-1] = length
    return x


def build_spatial_grid(count: int, kind: str = "uniform", domain_length: float = 1.0,
                       eps: float | None = None, walls: str = "both", ratio: float = 30.0,
                       layer_fraction: float = 0.25) -> SpatialGrid:
    """Nodes on [0, domain_length].

    ``kind='wall_refined'`` with ``eps`` puts at least ``layer_fraction`` of the
    nodes inside [0, eps] (and [L-eps, L] when ``walls='both'``), graded
    geometrically toward the wall.  Without ``eps`` a geometric grading with
    largest/smallest cell ratio ``ratio`` is used.
    """
    count = int(count)
    if count < 2:
        raise ValueError("count must be >= 2")
    L = float(domain_length)
    if kind == "uniform":
        x = np.linspace(0.0, L, count)
        x[-1] = L
        return SpatialGrid(x, "uniform")
    if kind != "wall_refined":
        raise ValueError(f"unknown spatial grid kind {kind!r}")
    nw = 2 if walls == "both" else 1
    n_int = count - 1
    if eps is None:
        half = n_int // nw if nw == 2 else n_int
        if nw == 2 and n_int % 2:
            raise ValueError("wall_refined on two walls needs an odd node count without eps")
        q = ratio ** (1.0 / max(half - 1, 1))
        cells = q ** np.arange(half)
        x = np.concatenate([[0.0], np.cumsum(cells)])
        x *= (L / nw) / x[-1]
        if nw == 2:
            x = np.concatenate([x, L - x[-2::-1]])
        x[-1] = L
        return SpatialGrid(x, "wall_refined", ratio)
    eps = float(eps)
    n_layer = int(np.ceil(layer_fraction * count))
    n_mid = n_int - nw * n_layer
    mid_len = L - nw * eps
    if n_mid < 1 or mid_len <= 0:
        raise ValueError("too few nodes or eps too large for a wall-refined grid")
    h_mid = mid_len / n_mid
    layer = _graded(eps, n_layer, h_mid)
    wall0 = layer
    if nw == 2:
        mid = np.linspace(eps, L - eps, n_mid + 1)
        x = np.concatenate([wall0, mid[1:], (L - wall0[::-1])[1:]])
    else:
        mid = np.linspace(eps, L, n_mid + 1)
        x = np.concatenate([wall0, mid[1:]])
    x[0], x[-1] = 0.0, L
    r = np.diff(x)
    return SpatialGrid(x, "wall_refined", float(r.max() / r.min()))


@dataclass(frozen=True)
class SphereQuadrature:
    """Product rule on S^2: Gauss-Legendre in cos(polar angle) times a uniform
    azimuthal rule.  The node set is closed under w -> -w, and node k and node
    ``antipode[k]`` are opposite."""

    nodes: np.ndarray
    weights: np.ndarray
    antipode: np.ndarray

    @property
    def size(self) -> int:
        return self.weights.size


def build_sphere_quadrature(n_polar: int = 16, n_azimuth: int = 32) -> SphereQuadrature:
    if n_polar % 2 or n_azimuth % 2:
        raise ValueError("n_polar and n_azimuth must be even")
    c, wc = np.polynomial.legendre.leggauss(n_polar)
    phi = (np.arange(n_azimuth) + 0.5) * 2 * np.pi / n_azimuth
    s = np.sqrt(1 - c * c)
    nodes = np.stack([
        np.repeat(c, n_azimuth),
        np.outer(s, np.cos(phi)).ravel(),
        np.outer(s, np.sin(phi)).ravel(),
    ], axis=1)
    weights = np.repeat(wc, n_azimuth) * (2 * np.pi / n_azimuth)
    ip = np.arange(n_polar)[::-1]
    ia = (np.arange(n_azimuth) + n_azimuth // 2) % n_azimuth
    antipode = (ip[:, None] * n_azimuth + ia[None, :]).ravel()
    return SphereQuadrature(nodes, weights, antipode)


SECTORS = ("full", "axisym", "odd2", "odd3")


class Sector:
    """Symmetry-reduced representation of velocity profiles.

    Profiles in a sector are determined by their values on orbit
    representatives of a subgroup of the grid's symmetries acting on (v2, v3):

    * ``axisym``: invariant under v2 -> -v2, v3 -> -v3 and v2 <-> v3.
    * ``odd2``: odd in v2, even in v3.
    * ``odd3``: even in v2, odd in v3.
    * ``full``: no reduction.

    All grid operators used here (transport, collision kernels, wall
    reflection) commute with these symmetries, so they act on reduced vectors
    through ``A_red = A[reps, :] @ E`` with ``E`` the expansion map.
    """

    def __init__(self, grid: VelocityGrid, name: str = "axisym"):
        if name not in SECTORS:
            raise ValueError(f"unknown sector {name!r}")
        self.grid = grid
        self.name = name
        n3 = grid.size
        if name == "full":
            self.reps = np.arange(n3)
            self.orbit = np.arange(n3)
            self.sign = np.ones(n3)
        else:
            elems = []
            for s2 in (1, -1):
                for s3 in (1, -1):
                    swaps = (False, True) if name == "axisym" else (False,)
                    for sw in swaps:
                        if name == "axisym":
                            ch = 1.0
                        elif name == "odd2":
                            ch = float(s2)
                        else:
                            ch = float(s3)
                        elems.append((grid.permutation((1, s2, s3), sw), ch))
            # canonical representative: the smallest index in the orbit
            stack = np.stack([p for p, _ in elems])
            canon = stack.min(axis=0)
            self.reps = np.unique(canon)
            self.orbit = np.searchsorted(self.reps, canon)
            # sign of node k relative to its representative: f(k)=sign*f(rep)
            # perm maps k -> g.k, i.e. f[perm] is f at g.v; node k = g^{-1} rep
            sign = np.zeros(n3)
            for p, ch in elems:
                hit = p[np.arange(n3)]
                mask = np.isin(hit, self.reps) & (sign == 0)
                # k = g^-1 . rep with g.k = rep; characters are +-1 so g^-1 has same character
                sign[mask] = ch
            self.sign = sign
        self.size = self.reps.size
        self.multiplicity = np.bincount(self.orbit, minlength=self.size).astype(float)
        # weights for inner products of two fields of the sector (the product is
        # invariant); plain integrals of one field use the signed orbit sums,
        # which vanish in the odd sectors
        self.weights = grid.weights[self.reps] * self.multiplicity
        self.signed_weights = np.bincount(self.orbit, grid.weights * self.sign, minlength=self.size)
        self.nodes = grid.nodes[self.reps]
        from scipy.sparse import csr_matrix
        self.E = csr_matrix((self.sign, (np.arange(n3), self.orbit)), shape=(n3, self.size))

    def reflection(self) -> np.ndarray:
        """Index map on reduced vectors for v1 -> -v1 (the sector is closed
        under it because the reduction acts on (v2, v3) only)."""
        perm = self.grid.permutation((-1, 1, 1))[self.reps]
        out = np.searchsorted(self.reps, perm)
        if not np.array_equal(self.reps[np.minimum(out, self.size - 1)], perm):
            raise RuntimeError("sector is not closed under v1 -> -v1")
        return out

    def expand(self, f_red: np.ndarray) -> np.ndarray:
        """Reduced values (..., n_red) -> full profiles (..., N^3)."""
        return f_red[..., self.orbit] * self.sign

    def restrict(self, f: np.ndarray) -> np.ndarray:
        return f[..., self.reps]

    def reduce_rows(self, rows: np.ndarray) -> np.ndarray:
        """Rows of a full operator at the representatives -> reduced matrix."""
        return np.asarray((self.E.T @ rows.T).T)

    def integrate(self, f_red: np.ndarray) -> np.ndarray:
        """Integral of the expanded field."""
        return f_red @ self.signed_weights

    def inner(self, f_red: np.ndarray, g_red: np.ndarray) -> np.ndarray:
        return np.sum(f_red * g_red * self.weights, axis=-1)

    def project(self, f: np.ndarray) -> np.ndarray:
        """Orthogonal projection of full profiles onto the sector."""
        return self.expand(self.symmetrize(f))

    def symmetrize(self, f: np.ndarray) -> np.ndarray:
        """Average of sign-corrected values over each orbit (reduced output)."""
        acc = np.zeros(f.shape[:-1] + (self.size,))
        np.add.at(acc.T, self.orbit, (f * self.sign).T) if f.ndim > 1 else np.add.at(acc, self.orbit, f * self.sign)
        return acc / self.multiplicity
