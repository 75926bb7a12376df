"""Exceptions raised across trajzoom.

Every error carries a machine-readable ``code`` so the command line can map
failures to exit codes and scripts can match on them.
"""


class TrajzoomError(Exception):
    """Base class for all trajzoom failures."""

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class ParameterError(TrajzoomError, ValueError):
    """A model parameter violates its range or regime."""

    def __init__(self, code, field, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(code, f"{where}{field}: {message}")
        self.field = field
        self.detail = message
        self.line = line


class ConfigError(TrajzoomError):
    """The run configuration text cannot be parsed."""

    def __init__(self, code, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(code, where + message)
        self.line = line


class PathError(TrajzoomError, ValueError):
    """A sampled path does not satisfy an operation's precondition."""


class SampleError(TrajzoomError, ValueError):
    """Statistics were requested on unusable samples."""


class OutputError(TrajzoomError):
    """An emitted or re-read file does not have the expected layout."""


class ConsistencyError(TrajzoomError):
    """An internal acceptance check failed."""
