"""Exception types shared across the package."""


class MotifxError(Exception):
    """Base class for all package errors."""


class IngestError(MotifxError):
    """A CSV row could not be parsed; message carries the line number."""


class SchemaError(MotifxError):
    """Rows disagree on the attribute width."""


class ShapeError(MotifxError):
    """Array shapes are incompatible for an operation."""


class NonFiniteError(MotifxError):
    """A loss or gradient became NaN/Inf."""


class EnumerationLimitError(MotifxError):
    """Exhaustive enumeration refused: history larger than the size guard."""


class InvariantError(MotifxError):
    """An internal contract was violated (e.g. feature map built from a different instance set)."""


class AdapterProtocolError(MotifxError):
    """External predictor broke the wire protocol (bad handshake, timeout, out-of-range value)."""


class DependencyError(MotifxError):
    """A command needs an artifact that an earlier command has not produced."""
