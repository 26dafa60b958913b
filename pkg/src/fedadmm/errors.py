class FedError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(FedError, ValueError):
    pass


class ModelOverflowError(FedError, ArithmeticError):
    pass


class ConvergenceError(FedError, RuntimeError):
    """An iterative routine stopped before meeting its tolerance.

    ``best`` carries the best value reached (a residual or an estimate).
    """

    def __init__(self, message: str, best: float | None = None):
        super().__init__(message)
        self.best = best


class InnerSolveError(ConvergenceError):
    pass


class DivergenceError(FedError, RuntimeError):
    pass


class ConfigError(FedError, ValueError):
    pass


class LibsvmFormatError(FedError, ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line
