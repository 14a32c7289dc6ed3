"""Fluctuation identities for upward skip-free Markov additive chains.

The chain moves its level by ``+1, 0, -1, ..., -M`` per step while a
finite phase process evolves alongside. The package computes first-passage
matrices, scale matrices and every one- and two-sided exit and reflection
transform, and checks them against exact linear solves and seeded Monte
Carlo.
"""
from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

from .errors import (ConditioningWarning, DomainWarning, MacError, NumericalError,
                     ValidationError)
from .exit import (f_star, first_increase_transform, one_sided_down, one_sided_reflected_up,
                   regulator_joint_transform, two_sided_down, two_sided_reflection_pgf,
                   two_sided_up)
from .fundamental import (NullRecurrentError, SolveReport, hitting_down, occupation_L,
                          occupation_Ln, solve_G)
from .model import (Drift, MacModel, SpectralData, ValidationReport, drift, eval_F, perron,
                    scalar_model, stationary, validate)
from .oracle import (Estimate, PathConfig, StripSpec, simulate, solve_reflected,
                     solve_regulator_joint, solve_strip)
from .scale import ScaleTable, w_sequence, z_matrix

__all__ = [
    "ConditioningWarning", "DomainWarning", "Drift", "Estimate", "MacError", "MacModel",
    "NullRecurrentError", "NumericalError", "PathConfig", "ScaleTable", "SolveReport",
    "SpectralData", "StripSpec", "ValidationError", "ValidationReport", "drift", "eval_F",
    "f_star", "first_increase_transform", "hitting_down", "occupation_L", "occupation_Ln",
    "one_sided_down", "one_sided_reflected_up", "perron", "regulator_joint_transform",
    "scalar_model", "simulate", "solve_G", "solve_reflected", "solve_regulator_joint",
    "solve_strip", "stationary", "two_sided_down", "two_sided_reflection_pgf", "two_sided_up",
    "validate", "w_sequence", "z_matrix",
]
