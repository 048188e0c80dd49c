"""Shared exception types."""


class ShelfLifeError(Exception):
    """Base class for library errors."""


class DataError(ShelfLifeError):
    """Malformed or inconsistent input data."""


class ConfigError(ShelfLifeError):
    """Invalid configuration."""


class FitError(ShelfLifeError):
    """A model fit could not be performed at all (e.g. no events)."""
