"""Exception hierarchy shared across the package."""


class TkgeError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(TkgeError):
    """A corpus line could not be parsed."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class DataError(TkgeError):
    """Inconsistent or unusable data (bad interval, unmapped label, ...)."""


class BundleError(TkgeError):
    """A dataset bundle file is missing, corrupt, or has the wrong version."""


class ConfigError(TkgeError):
    """Invalid configuration value or key."""


class CheckpointError(TkgeError):
    """A checkpoint file is corrupt, has the wrong version, or does not match."""
