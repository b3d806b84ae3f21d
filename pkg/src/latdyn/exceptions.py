"""Exception types shared across the package.

The CLI maps them to exit codes: ConfigError -> 2, DimensionError and
FormatError -> 3, DivergenceError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad group map, unknown keys, impossible settings."""


class DimensionError(ValueError):
    """Array shapes or lengths do not agree."""


class FormatError(DimensionError):
    """A file on disk is malformed, truncated, or of the wrong version."""


class FitError(ValueError):
    """Not enough data (samples or rank) to fit a model."""


class DivergenceError(RuntimeError):
    """A rollout produced a non-finite or runaway state.

    ``step`` holds the index of the first offending step.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class GradientError(RuntimeError):
    """A requested parameter was never recorded on the gradient tape."""
