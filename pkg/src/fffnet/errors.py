"""Exception hierarchy. Every error raised by this package derives from FFFError.

The CLI maps these onto exit codes; see the cli module docstring.
"""


class FFFError(Exception):
    """Base class for all package errors."""


class DimensionError(FFFError):
    """Array shapes do not line up for the requested operation."""


class DomainError(FFFError):
    """Scalar argument outside its mathematical domain (e.g. probability > 1)."""


class NumericError(FFFError):
    """A NaN or Inf appeared where the contract requires finite values."""


class ConfigError(FFFError):
    """Invalid or inconsistent configuration (bad variant, width combo, flag)."""


class DataError(FFFError):
    """Dataset acquisition failed (network trouble, missing files). Retryable."""


class IntegrityError(DataError):
    """Downloaded or cached file does not match its pinned checksum."""


class CheckpointError(FFFError):
    """Checkpoint file is corrupt, truncated, or from an unsupported version."""
