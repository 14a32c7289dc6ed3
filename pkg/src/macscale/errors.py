"""Exception and warning types shared across the package."""


class MacError(Exception):
    """Base class for all library errors."""

    exit_code = 2


class ValidationError(MacError, ValueError):
    """Model or argument fails a structural requirement."""

    exit_code = 1


class NumericalError(MacError, ArithmeticError):
    """A solve did not converge, a matrix is singular, or values blew up."""

    exit_code = 2


class DomainWarning(UserWarning):
    """Evaluation point lies outside the region where a transform is known to converge."""


class ConditioningWarning(UserWarning):
    """A matrix that has to be inverted is badly conditioned."""
