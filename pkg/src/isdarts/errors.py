"""Exception hierarchy shared by every module."""


class IsDartsError(Exception):
    """Base class for all package errors."""


class ConfigError(IsDartsError):
    """Invalid configuration. ``path`` names the offending field, e.g. ``schedule.r``."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DimensionError(IsDartsError, ValueError):
    pass


class UsageError(IsDartsError, ValueError):
    pass


class NumericalError(IsDartsError, FloatingPointError):
    """A non-finite value appeared. ``epoch`` is filled in by training drivers."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class MeasurementError(IsDartsError, ValueError):
    pass


class FormatError(IsDartsError, ValueError):
    pass


class FingerprintError(IsDartsError):
    pass


class OracleLookupError(IsDartsError, KeyError):
    pass
