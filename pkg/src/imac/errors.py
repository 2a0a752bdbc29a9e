"""Shared exception types."""


class ImacError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(ImacError, ValueError):
    """An operation was called with inputs outside its mathematical domain."""


class ValidationError(ImacError, ValueError):
    """A record or configuration failed schema validation."""


class TrainingDivergedError(ImacError, RuntimeError):
    """Training produced a non-finite loss; carries the offending batch info."""
