"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class ShapeError(ValueError):
    """Array dimensions are incompatible with an operation's contract."""


class NumericError(RuntimeError):
    """A computation produced NaN/Inf or otherwise left the finite domain."""


class AggregationError(ValueError):
    """Client parameter snapshots cannot be aggregated."""


class IdxFormatError(ValueError):
    """An IDX file is malformed; the message carries the byte offset."""
