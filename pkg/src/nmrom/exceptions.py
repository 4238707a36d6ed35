"""Exception hierarchy shared by every module."""


class NmromError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(NmromError, ValueError):
    pass


class RankDeficiencyError(NmromError, ValueError):
    pass


class ConvergenceError(NmromError, RuntimeError):
    """An iterative solver ran out of iterations.

    ``step`` carries the time-step index when the failure happened inside a
    time-marching loop.
    """

    def __init__(self, message, iterations=None, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.iterations = iterations
        self.step = step


class DivergenceError(NmromError, RuntimeError):
    pass


class FormatError(NmromError, ValueError):
    """Corrupt header, version mismatch or payload/header disagreement."""


class ConfigError(NmromError, ValueError):
    pass
