"""Exception types shared across the package."""


class CainError(Exception):
    """Base class for all package errors."""


class DimensionError(CainError, ValueError):
    pass


class ConfigError(CainError, ValueError):
    pass


class UsageError(CainError, ValueError):
    pass


class GradientError(CainError, FloatingPointError):
    """A NaN/Inf appeared in the forward or backward pass."""


class LookupRangeError(CainError, IndexError):
    pass


class MetricUndefinedError(CainError, ValueError):
    pass


class DataFormatError(CainError, ValueError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


class CheckpointError(CainError, IOError):
    pass


class ConfigDriftError(CheckpointError):
    pass
