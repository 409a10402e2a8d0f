"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SeqQuantError(Exception):
    """Base class for all package errors."""


class ConfigError(SeqQuantError, ValueError):
    """A scenario/config value violates its contract."""


class BudgetExceeded(SeqQuantError):
    """Exhaustive enumeration of the parameter grid is infeasible.

    Carries the offending candidate count so callers can decide how much
    to coarsen the grid step.
    """

    def __init__(self, count: int, budget: int):
        self.count = count
        self.budget = budget
        super().__init__(
            f"parameter grid has {count} candidates, exceeding the "
            f"exhaustive-search budget of {budget}; coarsen the grid step"
        )


class NonConvergence(SeqQuantError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message: str, residual_trace=None):
        self.residual_trace = list(residual_trace) if residual_trace else []
        super().__init__(message)


class DegeneratePolicy(SeqQuantError):
    """No continuation region exists: stopping immediately is optimal.

    Typically signals error costs below the cost of taking one sample.
    """


class GridTooNarrow(SeqQuantError):
    """A stopping region lies outside the likelihood-ratio grid."""

    def __init__(self, missing_low: bool, missing_high: bool):
        self.missing_low = missing_low
        self.missing_high = missing_high
        sides = [s for s, m in (("low", missing_low), ("high", missing_high)) if m]
        super().__init__(
            f"stopping region not reached on the {' and '.join(sides)} side "
            "of the z-grid; widen it"
        )


class NoInformativeQuantizer(SeqQuantError):
    """Every candidate parameter vector has a vanishing divergence."""


class CalibrationFailure(SeqQuantError):
    """Cost-coefficient calibration did not meet the target tolerance.

    The best iterate found is attached so callers can inspect how close
    the search got.
    """

    def __init__(self, message: str, best=None):
        self.best = best
        super().__init__(message)
