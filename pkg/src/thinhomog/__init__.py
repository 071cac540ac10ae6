"""Numerical homogenisation of the Neumann p-Laplacian on thin domains with
locally periodic oscillating boundaries."""

__version__ = "0.1.0"

from .profiles import Profile, PiecewiseProfile, build_piecewise_approx, validate_hypothesis  # noqa: E402
from .plap import EnergySpec, SolveConfig, SolverError, a_p, minimize  # noqa: E402
from .cell import EffectiveCoefficients, solve_cell, sample_coefficients  # noqa: E402
from .homog1d import Field1D, solve_homogenized  # noqa: E402
from .thin2d import EpsilonProblem, solve_epsilon_problem  # noqa: E402

__all__ = [
    "Profile", "PiecewiseProfile", "build_piecewise_approx", "validate_hypothesis",
    "EnergySpec", "SolveConfig", "SolverError", "a_p", "minimize",
    "EffectiveCoefficients", "solve_cell", "sample_coefficients",
    "Field1D", "solve_homogenized",
    "EpsilonProblem", "solve_epsilon_problem",
]
