"""Exception types shared across the package."""


class RBDSDEError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(RBDSDEError):
    """Invalid convex domain, or a point that violates a domain precondition."""


class IterationLimitError(RBDSDEError):
    """An iterative routine hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class QuadratureError(RBDSDEError):
    """Numerical integration failed or cannot meet its declared tolerance."""


class DivergenceError(RBDSDEError):
    """A simulated path or backward recursion produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class PositivityError(RBDSDEError):
    """A quantity that must be positive (e.g. a Jacobian determinant) is not."""


class ResourceError(RBDSDEError):
    """Requested computation exceeds the supported problem size."""


class ConfigError(RBDSDEError):
    """Malformed run configuration."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
