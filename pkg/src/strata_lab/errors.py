"""Exception hierarchy shared by every stage of the estimation stack."""

from __future__ import annotations


class StrataLabError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(StrataLabError, ValueError):
    pass


class BracketError(StrataLabError, ValueError):
    pass


class RankDeficiencyError(StrataLabError, ArithmeticError):
    """Normal equations are singular.

    ``directions`` holds the (unit-norm) parameter-space directions spanning
    the numerically null space, one per row.
    """

    def __init__(self, message: str, directions=None, labels=None):
        super().__init__(message)
        self.directions = directions
        self.labels = labels


class NonConvergenceError(StrataLabError, ArithmeticError):
    def __init__(self, message: str, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report


class SeparationError(StrataLabError, ArithmeticError):
    pass


class PositivityError(StrataLabError, ValueError):
    """A cell needed by an estimator holds no (or numerically no) units."""


class InfeasibilityError(StrataLabError, ArithmeticError):
    pass


class ReconciliationError(StrataLabError, ArithmeticError):
    pass


class EmptyStratumError(PositivityError):
    pass


class UnsupportedKindError(StrataLabError, ValueError):
    pass


class InvalidEvidenceError(StrataLabError, ValueError):
    pass


class UnreliableInferenceError(StrataLabError, RuntimeError):
    pass


class StageError(StrataLabError):
    """Wraps the first failure of a pipeline run with the stage it came from."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
