"""Steady Boltzmann heat conduction between two diffuse plates: the
Navier-Stokes profile with temperature jumps, Knudsen layers, the second-order
expansion and the kinetic remainder."""

__version__ = "0.1.0"

from .grid import Sector, SpatialGrid, VelocityGrid, build_spatial_grid, build_velocity_grid
from .maxwell import MacroState, WeightSpec, maxwellian, moments
from .ns_profile import NSProfile, SlipCoefficients, solve_algebraic
from .estimators import ConductionEstimator, KineticSlabSolver, SlipCoefficientEstimator

__all__ = [
    "ConductionEstimator", "KineticSlabSolver", "MacroState", "NSProfile", "Sector", "SlipCoefficientEstimator",
    "SlipCoefficients", "SpatialGrid", "VelocityGrid", "WeightSpec", "build_spatial_grid", "build_velocity_grid",
    "maxwellian", "moments", "solve_algebraic",
]
