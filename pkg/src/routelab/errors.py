"""Shared exception types."""


class ContractError(ValueError):
    """A caller violated an operation's precondition (bad shapes, indices, ranges)."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NotReadyError(RuntimeError):
    """A component was used before it had enough data (buffer, untrained model)."""


class NumericError(ArithmeticError):
    """Non-finite values reached a numeric routine; the operation was skipped."""


class InsufficientHistoryError(ValueError):
    """A time-series operation was asked for more history than exists."""
