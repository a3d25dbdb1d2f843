"""Numerical laboratory for small-noise large deviations of stochastic evolution equations."""

__version__ = "0.1.0"

from .control import Control
from .errors import (
    DegenerateInputError,
    DomainError,
    LdpLabError,
    ManifestError,
    PreconditionError,
    ValidationError,
)
from .integrators import SolverConfig, solve_perturbed, solve_skeleton, solve_spde, solve_tilted
from .noise import NoisePath
from .presets import make_preset
from .spectral import SpectralField, TorusGrid, Trajectory

__all__ = [
    "Control",
    "DegenerateInputError",
    "DomainError",
    "LdpLabError",
    "ManifestError",
    "NoisePath",
    "PreconditionError",
    "SolverConfig",
    "SpectralField",
    "TorusGrid",
    "Trajectory",
    "ValidationError",
    "make_preset",
    "solve_perturbed",
    "solve_skeleton",
    "solve_spde",
    "solve_tilted",
]
