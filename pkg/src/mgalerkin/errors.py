"""Exception types raised by the package."""


class MGalerkinError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MGalerkinError, ValueError):
    """Invalid combination of construction parameters."""


class InputError(MGalerkinError, ValueError):
    """Argument has the wrong shape or non-finite values."""


class DomainError(MGalerkinError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class UnsupportedConfigurationError(MGalerkinError):
    """Operation is not defined for the given problem layout."""


class UnstablePairError(MGalerkinError):
    """Discrete inf-sup constant of a finite element pair is below threshold."""
