"""Maxwellians, velocity moments, the macroscopic projection and the Burnett functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import SpatialGrid, VelocityGrid

UNDERFLOW = 1e-300


@dataclass(frozen=True)
class MacroState:
    rho: float
    u: tuple[float, float, float] = (0.0, 0.0, 0.0)
    theta: float = 1.0

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"density must be positive, got {self.rho}")
        if not self.theta > 0:
            raise ValueError(f"temperature must be positive, got {self.theta}")
        object.__setattr__(self, "u", tuple(float(c) for c in np.broadcast_to(self.u, (3,))))


@dataclass(frozen=True)
class WeightSpec:
    """Velocity weight (1 + |v|^2)^(beta/2) exp(varpi |v|^2)."""

    beta: float = 4.0
    varpi: float = 0.125

    def __post_init__(self):
        if not self.beta > 3:
            raise ValueError(f"beta must exceed 3, got {self.beta}")
        if not 0 < self.varpi <= 0.125:
            raise ValueError(f"varpi must lie in (0, 1/8], got {self.varpi}")


@dataclass
class DistributionField:
    """Samples F(x_i, v_k) on a spatial grid times a velocity grid."""

    values: np.ndarray
    space: SpatialGrid
    velocity: VelocityGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.space.count, self.velocity.size)
        if self.values.shape != expected:
            raise ValueError(f"field shape {self.values.shape} does not match grids {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite entries")


def maxwellian(state: MacroState, grid: VelocityGrid | np.ndarray) -> np.ndarray:
    nodes = grid.nodes if isinstance(grid, VelocityGrid) else np.asarray(grid)
    c = nodes - np.asarray(state.u)
    return state.rho * (2 * np.pi * state.theta) ** -1.5 * np.exp(-np.sum(c * c, axis=-1) / (2 * state.theta))


@dataclass
class Moments:
    mass: np.ndarray
    momentum: np.ndarray
    energy: np.ndarray
    flux: np.ndarray


def moments(f, grid: VelocityGrid | None = None) -> Moments:
    """Mass, momentum, energy (int |v|^2 f) and normal flux (int v1 f) per
    spatial node.  ``f`` is a DistributionField or an array (..., n_v)."""
    if isinstance(f, DistributionField):
        grid, values = f.velocity, f.values
    else:
        values = np.asarray(f, dtype=float)
    wf = values * grid.weights
    mom = wf @ grid.nodes
    return Moments(mass=wf.sum(axis=-1), momentum=mom, energy=wf @ grid.speed2, flux=mom[..., 0])


def macro_basis(state: MacroState, grid: VelocityGrid) -> tuple[np.ndarray, np.ndarray]:
    """Polynomials p_k with chi_k = p_k M, orthonormal under <f,g>_M on the grid.

    Returns (M, P) with ``P`` of shape (5, n_v).  Since <p M, q M>_M = sum w M p q,
    no division by M is needed.
    """
    M = maxwellian(state, grid)
    c = (grid.nodes - np.asarray(state.u)) / np.sqrt(state.theta)
    raw = [np.ones(grid.size), c[:, 0], c[:, 1], c[:, 2], (np.sum(c * c, axis=1) - 3) / np.sqrt(6)]
    wm = grid.weights * M
    basis = []
    for p in raw:
        q = p.copy()
        for _ in range(2):  # re-orthogonalize once for stability
            for e in basis:
                q -= np.sum(wm * q * e) * e
        q /= np.sqrt(np.sum(wm * q * q))
        basis.append(q)
    return M, np.array(basis)


def project_PM(f: np.ndarray, state: MacroState, grid: VelocityGrid) -> np.ndarray:
    """Orthogonal projection on Ker L_M under <f,g>_M = int f g / M."""
    M, P = macro_basis(state, grid)
    coef = (np.asarray(f) * grid.weights) @ P.T
    return (coef @ P) * M


def inner_M(f: np.ndarray, g: np.ndarray, M: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    mask = M > UNDERFLOW
    safe = np.where(mask, M, 1.0)
    return np.sum(np.where(mask, f * g / safe, 0.0) * grid.weights, axis=-1)


def burnett(kind: str, xi: np.ndarray) -> np.ndarray:
    """A_j (kind 'A1', 'A2', 'A3') or B at the points ``xi`` (..., 3)."""
    xi = np.asarray(xi, dtype=float)
    s2 = np.sum(xi * xi, axis=-1)
    if kind == "B":
        return 0.5 * (s2 - 5.0) * xi[..., 0]
    if kind in ("A1", "A2", "A3"):
        j = int(kind[1]) - 1
        return xi[..., j] * xi[..., 0] - (s2 / 3.0 if j == 0 else 0.0)
    raise ValueError(f"unknown Burnett function {kind!r}")


def weight_w(spec: WeightSpec, v: np.ndarray) -> np.ndarray:
    s2 = np.sum(np.asarray(v, dtype=float) ** 2, axis=-1)
    return (1 + s2) ** (spec.beta / 2) * np.exp(spec.varpi * s2)
