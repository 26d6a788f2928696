"""Exception types."""


class OewtError(Exception):
    """Base class for all package errors."""


class ValidationError(OewtError, ValueError):
    """Input data violates a record invariant."""


class SchemaError(ValidationError):
    """A required column is missing from an input file."""


class DimensionError(ValidationError):
    """Covariate counts disagree between inputs."""


class EmptySampleError(ValidationError):
    """A draw selected no units."""


class RangeError(ValidationError):
    """A calibration target cannot be bracketed."""


class DesignError(ValidationError):
    """A sampling design cannot be constructed as requested."""


class CertaintyUnitError(DesignError):
    """A unit would have inclusion probability above one."""


class DegenerateConfigurationError(ValidationError):
    """The pseudo-likelihood is unbounded for the given data."""


class NumericalError(OewtError, ArithmeticError):
    """A linear system could not be solved or a fit broke down."""
