"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class OvtError(Exception):
    """Base class for library errors."""


class GapTooSmall(OvtError):
    """Relative eigengap below the configured floor.

    ``quantity`` names what the gap measures ("eigen", "sigma", "kappa") and
    ``measured`` carries the estimate that failed.
    """

    def __init__(self, message: str, *, quantity: str = "eigen", measured: float | None = None):
        super().__init__(message)
        self.quantity = quantity
        self.measured = measured


class NoConvergence(OvtError):
    pass


class ZeroEigenvalue(OvtError):
    pass


class NotAProjector(OvtError):
    pass


class DimensionMismatch(OvtError, ValueError):
    pass


class UnsupportedMode2Multiplier(OvtError):
    pass


class RankBudgetExceeded(OvtError):
    pass


class DimensionCapExceeded(OvtError):
    pass


class DegenerateComponents(OvtError):
    pass


class ZeroVector(OvtError):
    pass


class EmptySet(OvtError, ValueError):
    pass


class DegenerateSample(OvtError):
    pass


class HypothesisViolated(OvtError):
    pass


class ConditionFailure(OvtError):
    """A conditioning gate (sigma or kappa) failed during decomposition."""

    def __init__(self, message: str, *, quantity: str, measured: float | None, floor: float | None):
        super().__init__(message)
        self.quantity = quantity
        self.measured = measured
        self.floor = floor
