"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures onto its documented exit statuses without a lookup table.
"""

from __future__ import annotations


class PeakShaveError(Exception):
    exit_code = 1


class ConfigError(PeakShaveError, ValueError):
    exit_code = 1


class DataError(PeakShaveError, ValueError):
    exit_code = 2


class NumericalError(PeakShaveError, ArithmeticError):
    exit_code = 3


# data errors
class IncompleteDay(DataError):
    def __init__(self, day: str, slot: int, message: str | None = None):
        self.day = day
        self.slot = slot
        super().__init__(message or f"day {day} has no reading for slot {slot}")


class InvalidReading(DataError):
    pass


class InsufficientData(DataError):
    pass


class InvalidNormalization(DataError):
    pass


class InvalidSplit(DataError):
    pass


class InvalidFoldCount(DataError):
    pass


class DegenerateLoad(DataError):
    pass


class MaskMismatch(DataError):
    pass


# model / numerical errors
class ShapeError(PeakShaveError, ValueError):
    exit_code = 2


class StaleCache(PeakShaveError, ValueError):
    exit_code = 3


class DegenerateWeighting(ConfigError):
    pass


class InvalidSpec(ConfigError):
    pass


class DivergenceError(NumericalError):
    def __init__(self, iteration: int, message: str | None = None, stage: int | None = None):
        self.iteration = iteration
        self.stage = stage
        where = f"iteration {iteration}" if stage is None else f"stage {stage}, iteration {iteration}"
        super().__init__(message or f"training diverged at {where}")
