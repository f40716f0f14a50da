"""Projection-based reduced-order models: Galerkin, adjoint Petrov-Galerkin
and least-squares Petrov-Galerkin on full-order finite-volume and linear
models, with POD bases, gappy-POD hyper-reduction, FLOP estimates and
linear-system error checks.
"""

from . import analysis, basis, dynamics, errors, hyper, rom, timeint
from .basis import TrialBasis, global_basis, per_variable_basis
from .dynamics import Euler1d, Euler1dConfig, LtiSystem, make_diffusion_lti
from .rom import Method, RomMethod, RomProblem, run_rom
from .timeint import IntegratorSpec, Scheme

__version__ = "0.1.0"

__all__ = [
    "analysis",
    "basis",
    "dynamics",
    "errors",
    "hyper",
    "rom",
    "timeint",
    "TrialBasis",
    "global_basis",
    "per_variable_basis",
    "Euler1d",
    "Euler1dConfig",
    "LtiSystem",
    "make_diffusion_lti",
    "Method",
    "RomMethod",
    "RomProblem",
    "run_rom",
    "IntegratorSpec",
    "Scheme",
]
