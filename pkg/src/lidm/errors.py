"""Exception hierarchy shared across the package."""


class LidmError(Exception):
    """Base class for all package errors."""


class DomainError(LidmError, ValueError):
    """An argument lies outside the domain of a conversion."""


class DegeneratePointError(DomainError):
    """A point coincides with the sensor origin."""


class OutOfFovError(DomainError):
    """A point's elevation falls outside the sensor's vertical field of view."""


class ConfigError(LidmError, ValueError):
    """Inconsistent or unsupported configuration."""


class DataError(LidmError, ValueError):
    """Input data violates a contract (bad ids, mismatched dimensions, empty sets)."""


class FormatError(LidmError):
    """A file does not match its declared binary layout."""


class DivergenceError(LidmError):
    """Training produced a non-finite loss."""


class CheckpointError(LidmError):
    """A checkpoint is unreadable or does not match the requested configuration."""
