"""Exception types shared across the package.

The CLI maps ``DataError`` subclasses to exit code 3 and ``NumericalError``
subclasses to exit code 4.
"""


class AmbistopError(Exception):
    pass


class DataError(AmbistopError):
    pass


class NumericalError(AmbistopError):
    pass


class ZeroMass(DataError, ValueError):
    pass


class AbsoluteContinuityViolated(DataError, ValueError):
    pass


class OutOfRange(DataError, ValueError):
    pass


class SchemaError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LengthMismatch(DataError):
    pass


class NoConvergence(NumericalError):
    pass


class BudgetExhausted(NumericalError):
    pass


class DegenerateUpdate(NumericalError):
    pass


class StateSpaceTooLarge(NumericalError):
    pass


class RegressionSingular(UserWarning):
    """Emitted when an LSMC design matrix is rank deficient and ridge is used."""
