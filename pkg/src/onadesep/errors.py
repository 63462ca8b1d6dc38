"""Exception hierarchy shared across the package."""


class OnadesepError(Exception):
    """Base class for all package errors."""


class AlignmentError(OnadesepError, ValueError):
    """Waveforms disagree in length, sample rate, or source count."""


class DomainError(OnadesepError, ValueError):
    """An argument lies outside the domain of an operation."""


class ShapeError(OnadesepError, ValueError):
    """Array shapes do not match what a model or loss expects."""


class ConfigError(OnadesepError, ValueError):
    pass


class CheckpointError(OnadesepError):
    pass


class DataError(OnadesepError):
    pass


class NumericalError(OnadesepError, ArithmeticError):
    """A loss or gradient became non-finite."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
