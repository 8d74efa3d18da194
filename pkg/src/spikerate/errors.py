"""Exception hierarchy shared by every module."""

from __future__ import annotations


class SpikeRateError(Exception):
    """Base class for all package errors."""


class ConfigError(SpikeRateError, ValueError):
    """Invalid configuration or argument value."""


class OrderingError(SpikeRateError, ValueError):
    """Event timestamps are not in non-decreasing order."""


class BoundsError(SpikeRateError, IndexError):
    """An index or shape does not fit the declared sizes."""


class GapError(SpikeRateError, ValueError):
    """A frame was pushed out of timestep order."""


class InsufficientHistoryError(SpikeRateError):
    """A history window does not yet hold enough frames."""


class NumericError(SpikeRateError, ArithmeticError):
    """A non-finite value reached a numeric routine."""


class ParseError(SpikeRateError, ValueError):
    """Malformed record in an event or manifest file."""

    def __init__(self, message: str, *, path=None, line: int | None = None, offset: int | None = None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.path = path
        self.line = line
        self.offset = offset


class UndefinedMetricError(SpikeRateError, ZeroDivisionError):
    """A metric is undefined for the given input (e.g. all-zero truth)."""


class UndefinedRateError(SpikeRateError, ZeroDivisionError):
    """A conditional rate was requested for a context never observed."""
