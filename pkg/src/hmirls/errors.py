"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class SingularityError(ArithmeticError):
    """A spectral denominator vanished; the requested operator does not exist."""


class NumericalFailure(RuntimeError):
    """A linear-algebra kernel failed (factorization breakdown, non-convergence)."""


class InsufficientDataError(ValueError):
    """Too few usable samples for the requested estimate."""


class SchemaError(ValueError):
    """A structured file does not match the documented schema."""
