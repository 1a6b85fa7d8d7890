"""Exception hierarchy shared by the library and the command line."""


class PdeGpError(Exception):
    """Base class for every error raised by :mod:`pdegp`."""


class InvalidInputError(PdeGpError, ValueError):
    """An argument violates a documented precondition."""


class IllConditionedKernelError(PdeGpError, ArithmeticError):
    """Cholesky factorization failed at every jitter level.

    Attributes
    ----------
    jitter_levels : tuple of float
        Relative jitter levels that were attempted, in order.
    """

    def __init__(self, message, jitter_levels=()):
        super().__init__(message)
        self.jitter_levels = tuple(jitter_levels)


class NegativeVarianceError(PdeGpError, ArithmeticError):
    """A posterior variance came out negative beyond round-off."""


class AdaptationError(PdeGpError, RuntimeError):
    """Warmup produced no usable trajectories."""


class DatasetParseError(PdeGpError, ValueError):
    """A dataset or field file could not be parsed.

    ``line`` and ``column`` are 1-based and ``None`` when not applicable.
    """

    def __init__(self, message, line=None, column=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.column = column


class DatasetValidationError(PdeGpError, ValueError):
    """A dataset parsed but violates a schema invariant."""


class ConfigError(PdeGpError, ValueError):
    """A run configuration is incomplete or inconsistent."""
