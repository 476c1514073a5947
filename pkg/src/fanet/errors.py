"""Exception hierarchy; each class maps onto a CLI exit code."""


class FanetError(Exception):
    exit_code = 1


class ShapeError(FanetError, ValueError):
    """Operand shapes do not conform.  ``dimension`` names the offending axis."""

    def __init__(self, message, dimension=None):
        super().__init__(message if dimension is None else f"{message} [dimension: {dimension}]")
        self.dimension = dimension


class ConfigError(FanetError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class ValidationError(FanetError, ValueError):
    pass


class UsageError(FanetError):
    pass


class NumericalError(FanetError, ArithmeticError):
    exit_code = 2


class FanetIOError(FanetError, OSError):
    exit_code = 3
