"""Exception hierarchy shared by every module."""


class PredProfileError(Exception):
    """Base class for package errors."""


class ConfigError(PredProfileError):
    """Bad configuration or mismatched alphabets."""


class ParseError(PredProfileError):
    """Malformed input file; message carries the line number."""


class DataError(PredProfileError):
    """Counts or matrices that violate their invariants."""


class ConsistencyError(PredProfileError):
    """An internal invariant failed (for example an unnormalized distribution)."""


class MalformedHistoryError(PredProfileError):
    """A history that the environment could not have produced."""


class ImpossibleObservationError(PredProfileError):
    """Belief update with a zero-probability observation."""


class SizeError(PredProfileError):
    """A requested matrix block exceeds the configured cap."""


class PreconditionError(PredProfileError):
    """An operation was called on an input it does not support."""


class PrerequisiteError(PredProfileError):
    """A pipeline stage is missing an upstream artifact."""


class StalenessError(PredProfileError):
    """Artifacts were produced under a different configuration."""
