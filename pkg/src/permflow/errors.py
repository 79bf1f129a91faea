"""Exception types shared across the package."""


class PermflowError(Exception):
    """Base class for all package-specific errors."""


class InvalidStencilError(PermflowError, ValueError):
    """Interpolation stencil is malformed (duplicate or too few offsets)."""


class ShapeError(PermflowError, ValueError):
    """Array shape incompatible with the dyadic grid conventions."""


class LevelError(PermflowError, ValueError):
    """Requested more transform levels than the grid supports."""


class ParameterError(PermflowError, ValueError):
    """A numeric parameter violates its constraint."""


class DomainError(PermflowError, ValueError):
    """Field values outside the admissible domain (e.g. k <= 0)."""


class CompatibilityError(PermflowError, ValueError):
    """Source/sink terms incompatible with the pure-Neumann problem."""


class ConvergenceError(PermflowError, RuntimeError):
    """Iterative solve exhausted its budget; carries the last residual."""

    def __init__(self, message, residual=None, cycles=None):
        super().__init__(message)
        self.residual = residual
        self.cycles = cycles


class InvariantError(PermflowError, ValueError):
    """A particle/tree invariant was violated."""


class DegeneracyError(PermflowError, RuntimeError):
    """All particle weights underflowed to zero."""


class ConfigError(PermflowError, ValueError):
    """Configuration parse or validation failure; carries the key path."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
