"""Shared exception types."""


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of iterations before reaching tolerance.

    Carries the last iterate so callers can inspect or salvage it.
    """

    def __init__(self, message, last_iterate=None, iterations=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class ConfigError(ValueError):
    """Invalid experiment configuration (bad key, type, or value)."""


class SequencingError(RuntimeError):
    """An observation or rollover arrived out of order."""
