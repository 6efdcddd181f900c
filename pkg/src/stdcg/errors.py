class StdcgError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgument(StdcgError, ValueError):
    pass


class ConvergenceError(StdcgError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(f"{message} (residual={residual!r})" if residual is not None else message)
        self.residual = residual


class DegenerateParameterization(StdcgError, ValueError):
    pass


class DesignInfeasible(StdcgError, RuntimeError):
    """Raised when a pulse design cannot meet its tolerance.

    ``best`` holds the best parameters found and ``residual`` the objective
    value they reached.
    """

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class CalibrationError(StdcgError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class FitFailure(StdcgError, RuntimeError):
    pass


class ConfigError(StdcgError, ValueError):
    pass
