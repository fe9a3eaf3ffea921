"""Steady heat-conduction profile of the compressible Navier-Stokes system with
temperature-jump walls.

With u = 0 the system reduces to rho theta = P0 and kappa(theta) theta' =
const, whose solution is theta(x) = (D1 x + D2)^(2/3), rho = P0/theta.  The
three constants follow from the two jump relations and unit total mass.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EPS_MAX = 0.2
MAX_ITER = 50
RESIDUAL_TOL = 1e-12


class ProfileError(RuntimeError):
    pass


@dataclass(frozen=True)
class SlipCoefficients:
    c_alpha1: float
    c_alpha2: float
    c_bar: float
    c_beta1: float
    c_beta2: float

    def __post_init__(self):
        for name in ("c_alpha1", "c_alpha2", "c_bar", "c_beta1", "c_beta2"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")


@dataclass(frozen=True)
class NSProfile:
    D1: float
    D2: float
    P0: float
    theta0: float
    theta1: float
    eps: float = 0.0
    c_beta2: float = 0.0
    iterations: int = 0
    residuals: tuple = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self):
        if not (self.D2 > 0 and self.D1 + self.D2 > 0 and self.P0 > 0):
            raise ProfileError(f"invalid profile constants D1={self.D1}, D2={self.D2}, P0={self.P0}")

    def theta(self, x):
        return (self.D1 * np.asarray(x, dtype=float) + self.D2) ** (2.0 / 3.0)

    def rho(self, x):
        return self.P0 / self.theta(x)

    def theta_derivative(self, x, order: int = 1):
        """d^k theta / dx^k in closed form."""
        s = self.D1 * np.asarray(x, dtype=float) + self.D2
        c = 1.0
        for j in range(order):
            c *= 2.0 / 3.0 - j
        return c * self.D1 ** order * s ** (2.0 / 3.0 - order)

    def total_mass(self) -> float:
        return _mass(self.D1, self.D2, self.P0)

    @property
    def wall_gradients(self) -> tuple[float, float]:
        return float(self.theta_derivative(0.0)), float(self.theta_derivative(1.0))


def _cube_sum(D1, D2):
    # S^{2/3} + (S D2)^{1/3} + D2^{2/3} with S = D1 + D2, so that
    # S^{1/3} - D2^{1/3} = D1 / q without cancellation
    a = np.cbrt(D1 + D2)
    b = np.cbrt(D2)
    return a * a + a * b + b * b


def _mass(D1, D2, P0):
    return 3.0 * P0 / _cube_sum(D1, D2)


def residuals(eps: float, c_beta2: float, D1: float, D2: float, P0: float, theta0: float,
              theta1: float) -> np.ndarray:
    a = 2.0 * c_beta2 * eps / (3.0 * P0)
    S = D1 + D2
    return np.array([
        D2 ** (2 / 3) - theta0 - a * D1 * np.cbrt(D2),
        S ** (2 / 3) - theta1 + a * D1 * np.cbrt(S),
        _mass(D1, D2, P0) - 1.0,
    ])


def jacobian(eps: float, c_beta2: float, D1: float, D2: float, P0: float) -> np.ndarray:
    a = 2.0 * c_beta2 * eps / (3.0 * P0)
    S = D1 + D2
    s13, d13 = np.cbrt(S), np.cbrt(D2)
    J = np.empty((3, 3))
    J[0] = [-a * d13, (2 / 3) / d13 - a * D1 / (3 * d13 * d13), a * D1 * d13 / P0]
    J[1, 0] = (2 / 3) / s13 + a * s13 + a * D1 / (3 * s13 * s13)
    J[1, 1] = (2 / 3) / s13 + a * D1 / (3 * s13 * s13)
    J[1, 2] = -a * D1 * s13 / P0
    q = _cube_sum(D1, D2)
    dq1 = (2 / 3) / s13 + d13 / (3 * s13 * s13)
    dq2 = (2 / 3) / s13 + (d13 / (s13 * s13) + s13 / (d13 * d13)) / 3 + (2 / 3) / d13
    J[2] = [-3 * P0 * dq1 / q ** 2, -3 * P0 * dq2 / q ** 2, 3.0 / q]
    return J


def zero_eps_constants(theta0: float, theta1: float) -> tuple[float, float, float]:
    t0, t1 = theta0 ** 1.5, theta1 ** 1.5
    return t1 - t0, t0, (t1 - t0) / (3.0 * (np.sqrt(theta1) - np.sqrt(theta0)))


def solve_algebraic(theta0: float, theta1: float, eps: float = 0.0, c_beta2: float = 0.0) -> NSProfile:
    """Newton solve for (D1, D2, P0), seeded at the eps = 0 closed form."""
    if not (theta0 > 0 and theta1 > 0):
        raise ValueError("wall temperatures must be positive")
    if not 0 <= eps <= EPS_MAX:
        raise ValueError(f"eps must lie in [0, {EPS_MAX}], got {eps}")
    if theta0 == theta1:
        return NSProfile(0.0, theta0 ** 1.5, theta0, theta0, theta1, eps, c_beta2)
    x = np.array(zero_eps_constants(theta0, theta1))
    det0 = (4 / 9) / (np.sqrt(theta0 * theta1) * x[2])
    r = residuals(eps, c_beta2, *x, theta0, theta1)
    norm = np.max(np.abs(r))
    for it in range(MAX_ITER + 1):
        if norm <= RESIDUAL_TOL:
            return NSProfile(float(x[0]), float(x[1]), float(x[2]), theta0, theta1, eps, c_beta2,
                             it, tuple(float(v) for v in r))
        if it == MAX_ITER:
            break
        J = jacobian(eps, c_beta2, *x)
        if abs(np.linalg.det(J)) < 1e-12 * abs(det0):
            raise ProfileError(f"near-singular Jacobian at iteration {it}")
        step = np.linalg.solve(J, -r)
        lam = 1.0
        while True:
            trial = x + lam * step
            ok = trial[1] > 0 and trial[0] + trial[1] > 0 and trial[2] > 0
            if ok:
                rt = residuals(eps, c_beta2, *trial, theta0, theta1)
                nt = np.max(np.abs(rt))
                if nt < norm or lam < 1e-4:
                    break
            lam *= 0.5
            if lam < 1e-8:
                raise ProfileError(f"damped Newton stalled at residual {norm:.3e}")
        x, r, norm = trial, rt, nt
    raise ProfileError(f"Newton did not converge in {MAX_ITER} iterations (residual {norm:.3e})")


def eval_profile(profile: NSProfile, x):
    """(rho, theta, dtheta/dx, d2theta/dx2) at ``x``."""
    return (profile.rho(x), profile.theta(x), profile.theta_derivative(x, 1), profile.theta_derivative(x, 2))


def check_jump_conditions(profile: NSProfile) -> tuple[float, float]:
    """Absolute residuals of the two wall temperature-jump relations."""
    p = profile
    k = p.c_beta2 * p.eps / p.P0
    t_a, t_b = float(p.theta(0.0)), float(p.theta(1.0))
    g_a, g_b = p.wall_gradients
    r0 = (t_a - p.theta0) / t_a - k * g_a
    r1 = (t_b - p.theta1) / t_b + k * g_b
    return abs(r0), abs(r1)


def export_csv(profile: NSProfile, path: str | Path, x=None) -> Path:
    x = np.linspace(0.0, 1.0, 101) if x is None else np.asarray(x, dtype=float)
    rho, theta, dtheta, _ = eval_profile(profile, x)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "rho", "theta", "dtheta_dx"])
        for row in zip(x, rho, theta, dtheta):
            w.writerow([repr(float(v)) for v in row])
    return path
