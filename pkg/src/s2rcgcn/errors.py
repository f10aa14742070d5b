"""Exception types shared across the package."""


class S2RCError(Exception):
    """Base class for all package errors."""


class ShapeError(S2RCError, ValueError):
    """Operand dimensions are incompatible."""


class ContractError(S2RCError, ValueError):
    """A documented precondition was violated."""


class ConfigError(S2RCError, ValueError):
    """An invalid configuration value."""


class NonFiniteError(S2RCError, ArithmeticError):
    """A primitive produced NaN or Inf."""


class GradientError(S2RCError, RuntimeError):
    """Misuse of the reverse-mode engine."""


class DatasetError(S2RCError, ValueError):
    """A dataset bundle failed to load or validate."""
