"""Nonlinear Petrov-Galerkin solvers with numerical certificates for mapped coercivity."""

from mgalerkin.errors import (
    ConfigurationError,
    DomainError,
    InputError,
    MGalerkinError,
    UnstablePairError,
    UnsupportedConfigurationError,
)
from mgalerkin.kernels import BACKEND

__version__ = "0.1.0"
