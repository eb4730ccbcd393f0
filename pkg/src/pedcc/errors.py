"""Exception hierarchy shared by every module."""


class PedccError(Exception):
    """Base class for all errors raised by this package."""


class ZeroRowError(PedccError, ValueError):
    """A row that must be normalised has (numerically) zero length."""


class CoincidentPointsError(PedccError, ValueError):
    """Two points on the sphere are closer than the force law tolerates."""


class DimensionMismatchError(PedccError, ValueError):
    pass


class ConfigError(PedccError, ValueError):
    pass


class NonFiniteLossError(PedccError, FloatingPointError):
    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class EmptyClassError(PedccError, ValueError):
    pass


class ParseError(PedccError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LabelRangeError(PedccError, ValueError):
    pass


class BadMagicError(PedccError, ValueError):
    pass


class CountMismatchError(PedccError, ValueError):
    pass


class TruncatedError(PedccError, ValueError):
    pass


class SchemaError(PedccError, ValueError):
    pass


class FormatVersionMismatchError(SchemaError):
    pass


class CentroidInvariantError(SchemaError):
    """A centroid file parsed but its rows violate the unit-norm contract."""
