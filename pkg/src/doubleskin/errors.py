"""Exception hierarchy shared by all solver modules."""


class DoubleSkinError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(DoubleSkinError, ValueError):
    """Invalid problem configuration or invalid solver parameter."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedDimensionError(ConfigError):
    pass


class DomainError(DoubleSkinError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class AssemblyError(DoubleSkinError, ValueError):
    pass


class GridMismatchError(DoubleSkinError, ValueError):
    pass


class GridTooCoarseError(ConfigError):
    pass


class ConvergenceError(DoubleSkinError, RuntimeError):
    """An iterative method stopped before reaching its tolerance.

    ``residual`` is the last relative residual, ``iterate`` the best iterate
    available when the method stopped (may be ``None``).
    """

    def __init__(self, message, residual=float("nan"), iterations=0, iterate=None):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations
        self.iterate = iterate
