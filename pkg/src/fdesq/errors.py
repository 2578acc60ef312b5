"""Exception hierarchy shared by every fdesq module."""


class FdesqError(Exception):
    """Base class for all library errors."""


class DimensionError(FdesqError, ValueError):
    """Array shapes do not agree (state length, matrix size, trace length)."""


class ParameterError(FdesqError, ValueError):
    """A numeric parameter is outside its admissible range."""


class NumericalError(FdesqError, ArithmeticError):
    """A computation produced NaN or infinity."""


class InputError(FdesqError, ValueError):
    """An input collection is empty or too short for the requested operation."""


class DataError(FdesqError, ValueError):
    """Data violates a domain invariant (non-positive price, duplicate date)."""


class DegenerateRangeError(DataError):
    """Min-max normalization of a constant series."""


class DegenerateInputError(DataError):
    """Statistic undefined for the input, e.g. correlation of a constant series."""


class RangeError(FdesqError, IndexError):
    """A requested window falls outside the series."""


class IoError(FdesqError, OSError):
    """A file could not be read or written."""


class ParseError(FdesqError, ValueError):
    """Malformed text input. Carries the offending 1-based line number."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f"{':' if where else 'line '}{line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(FdesqError, ValueError):
    """Invalid run configuration."""
