"""Exception types shared across the package."""


class AceError(Exception):
    """Base class for all package errors."""


class ShapeError(AceError, ValueError):
    pass


class NumericError(AceError, FloatingPointError):
    """A non-finite value appeared where finite numbers are required."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class InsufficientDataError(AceError, ValueError):
    pass


class DegenerateRegressorError(AceError, ValueError):
    pass


class DegenerateVariableError(AceError, ValueError):
    """A column with zero variance was passed to causal discovery."""

    def __init__(self, message, column):
        super().__init__(message)
        self.column = column


class ConvergenceError(AceError, RuntimeError):
    pass


class InputError(AceError, ValueError):
    pass


class AlignmentError(AceError, ValueError):
    """Evaluation grids of different seeds do not line up."""


class ConfigError(AceError, ValueError):
    pass
