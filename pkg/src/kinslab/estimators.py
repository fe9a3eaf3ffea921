"""Estimator-style wrappers: parameters in ``__init__``, work in ``fit``,
results in trailing-underscore attributes."""

from __future__ import annotations

import inspect

import numpy as np


class _Params:
    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {k: getattr(self, k) for k in self._param_names()}

    def set_params(self, **params):
        valid = self._param_names()
        for k, v in params.items():
            if k not in valid:
                raise ValueError(f"invalid parameter {k!r} for {type(self).__name__}")
            setattr(self, k, v)
        return self

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.get_params().items())
        return f"{type(self).__name__}({args})"

    def _check_fitted(self, attr):
        if not hasattr(self, attr):
            raise RuntimeError(f"{type(self).__name__} is not fitted yet; call fit first")


class SlipCoefficientEstimator(_Params):
    """Slip and jump coefficients from the five half-space problems."""

    def __init__(self, N: int = 16, V_max: float = 6.5, Y: float = 20.0):
        self.N = N
        self.V_max = V_max
        self.Y = Y

    def fit(self, X=None, y=None):
        from .grid import build_velocity_grid
        from .milne import extract_slip_coefficients
        self.result_ = extract_slip_coefficients(build_velocity_grid(self.N, self.V_max), self.Y)
        self.coefficients_ = self.result_.coefficients
        return self


class ConductionEstimator(_Params):
    """Navier-Stokes conduction profile with temperature-jump walls."""

    def __init__(self, theta0: float = 1.0, theta1: float = 1.2, c_beta2: float = 0.0):
        self.theta0 = theta0
        self.theta1 = theta1
        self.c_beta2 = c_beta2

    def fit(self, eps: float = 0.0, y=None):
        from .ns_profile import solve_algebraic
        self.profile_ = solve_algebraic(self.theta0, self.theta1, float(eps), self.c_beta2)
        return self

    def predict(self, x) -> np.ndarray:
        """Columns (rho, theta) at the points ``x``."""
        self._check_fitted("profile_")
        x = np.asarray(x, dtype=float)
        return np.stack([self.profile_.rho(x), self.profile_.theta(x)], axis=-1)


class KineticSlabSolver(_Params):
    """Full kinetic solution F = F_a + eps^(1+alpha) F_R for one eps."""

    def __init__(self, theta0: float = 1.0, theta1: float = 1.2, N: int = 16, V_max: float = 6.5,
                 alpha: float = 0.25, tol: float = 1e-9, max_iter: int = 200, sphere=(4, 8)):
        self.theta0 = theta0
        self.theta1 = theta1
        self.N = N
        self.V_max = V_max
        self.alpha = alpha
        self.tol = tol
        self.max_iter = max_iter
        self.sphere = sphere

    def fit(self, eps: float, y=None):
        from .collision import CollisionIntegral
        from .grid import build_velocity_grid
        from .kinetic import solve_full
        grid = build_velocity_grid(self.N, self.V_max)
        Q = CollisionIntegral(grid, *self.sphere)
        r = solve_full(float(eps), self.theta0, self.theta1, grid, self.alpha, collision=Q, tol=self.tol,
                       max_iter=self.max_iter)
        self.result_ = r
        self.F_ = r.F
        self.bundle_ = r.bundle
        self.report_ = r.report
        self.x_ = r.bundle.x.nodes
        return self

    def transform(self, X=None) -> np.ndarray:
        """Columns (x, rho, theta) of the fitted field's moments."""
        from .diagnostics import gas_moments
        self._check_fitted("F_")
        rho, th = gas_moments(self.F_, self.bundle_.sector)
        return np.column_stack([self.x_, rho, th])
