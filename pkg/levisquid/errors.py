def vert(condition: bool, error_message: str = '') -> None:
    """If condition is False, raises a ValueError with the given message."""
    if not condition:
        raise ValueError(error_message)

def tert(condition: bool, error_message: str = '') -> None:
    """If condition is False, raises a TypeError with the given message."""
    if not condition:
        raise TypeError(error_message)


class UsageError(BaseException):
    ...

def tressa(condition: bool, error_message: str = '') -> None:
    """If condition is False, raises a UsageError with the given message."""
    if not condition:
        raise UsageError(error_message)


class DomainError(ValueError):
    """An argument lies outside the physical domain of an operation."""


def dert(condition: bool, error_message: str = '') -> None:
    """If condition is False, raises a DomainError with the given message."""
    if not condition:
        raise DomainError(error_message)


class SingularGeometryError(ValueError):
    """A source point lies on a line-integration path."""


class NearSingularityError(DomainError):
    """A flux bias lies inside the exclusion window around half a flux quantum."""


class InitializationError(ValueError):
    """No starting point could be derived from the data."""


class FitError(ArithmeticError):
    """A least-squares fit did not converge. The best parameters found
        before giving up are kept on the `best` attribute.
    """
    def __init__(self, message: str, best: dict|None = None) -> None:
        super().__init__(message)
        self.best = best or {}


class SlopeRangeError(ValueError):
    """A requested flux responsivity cannot be reached on the tuning curve."""
    def __init__(self, message: str, max_slope: float) -> None:
        super().__init__(message)
        self.max_slope = max_slope


class ExtrapolationError(ValueError):
    """A bias point lies outside the interior of a fitted tuning curve."""


class CalibrationError(ValueError):
    """A calibration reference peak is missing or too weak."""


class UnphysicalInputError(ValueError):
    """Inputs imply an efficiency above one or a negative added noise."""


class DivergenceError(ArithmeticError):
    """A quantity diverges for the given input (e.g. zero efficiency)."""


class ConfigError(ValueError):
    """A configuration file could not be parsed or validated."""
    def __init__(self, message: str, line: int|None = None,
                 column: int|None = None) -> None:
        super().__init__(message)
        self.line = line
        self.column = column


class UnitError(ConfigError):
    """A configuration value was given in units the field does not accept."""
    def __init__(self, message: str, path: str) -> None:
        super().__init__(message)
        self.path = path
