"""Exception hierarchy for feature-graph-lab.

The CLI maps each family to an exit code: validation errors exit 1, runtime
errors exit 2 and resource-cap errors exit 3.
"""

from __future__ import annotations


class LabError(Exception):
    """Base class for every error raised by feature-graph-lab."""

    exit_code = 2


class LabValidationError(LabError, ValueError):
    """Input failed validation."""

    exit_code = 1


class ExpressionSyntaxError(LabValidationError):
    """Expression text does not follow the x<k> sum-of-products syntax."""


class DisjointnessError(LabValidationError):
    """A variable appears in two terms, or twice in one term."""


class PairwiseScopeError(LabValidationError):
    """An expression has a term with three or more variables where only pairs are allowed."""


class GraphFormatError(LabValidationError):
    """Edge-list text or edge data is malformed."""


class InfeasibleStratumError(LabValidationError):
    """A sampling quota asks for a graph combination that cannot be produced."""


class ShapeError(LabValidationError):
    """Tensor shapes are incompatible for an operation."""


class DatasetError(LabValidationError):
    """A dataset specification or file is invalid."""


class PlanError(LabValidationError):
    """An experiment plan or recipe is invalid."""


class SelectionTooLargeError(LabValidationError):
    """Exhaustive selection was asked for more features than it can enumerate."""


class ManifestError(LabValidationError):
    """A workspace artifact is missing or does not match its recorded hash."""


class LabRuntimeError(LabError, RuntimeError):
    """A computation failed while running."""

    exit_code = 2


class NonFiniteError(LabRuntimeError):
    """A forward operation produced NaN or Inf."""


class TrainingDivergedError(LabRuntimeError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"Training diverged at epoch {epoch}")


class UnmatchedPairError(LabRuntimeError):
    """A paired comparison has no seed-matched records on one side."""


class ResourceCapError(LabError):
    """A graph needs more message-passing arcs than the configured cap."""

    exit_code = 3
