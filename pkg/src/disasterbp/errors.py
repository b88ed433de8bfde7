"""Exception and warning types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class ValidationError(ValueError):
    """A configuration or experiment spec is malformed."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (step control, quadrature, bracketing)."""


class IntegrationError(NumericalError):
    """The adaptive ODE integrator could not meet its tolerance."""


class DomainEscapeError(NumericalError):
    """A simulated state left its interval by more than the allowed slack."""


class RegimeError(ValueError):
    """An operation was asked to run outside the regime it is valid for."""


class InconclusiveError(RuntimeError):
    """Numerical evidence does not settle a limit or criterion."""


class NumericWarning(RuntimeWarning):
    """Result may be inaccurate (cancellation, underflow, truncation)."""


class RegularVariationWarning(RuntimeWarning):
    """A function does not look regularly varying on the supplied grid."""
