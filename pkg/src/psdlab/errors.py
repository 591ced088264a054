"""Exception hierarchy for the laboratory.

Every error raised on purpose derives from PsdLabError so the CLI can map
it to an exit code. Input problems also derive from ValueError.
"""


class PsdLabError(Exception):
    """Base class for all laboratory errors."""


class ShapeError(PsdLabError, ValueError):
    """Array dimensions do not match what the operation expects."""


class InvalidInputError(PsdLabError, ValueError):
    """Input contains non-finite values or is otherwise malformed."""


class SymmetryError(InvalidInputError):
    """A matrix expected to be symmetric is not."""


class DimensionError(PsdLabError, ValueError):
    """A requested dimension exceeds what the data supports."""


class GeometryError(PsdLabError, ValueError):
    """Image or trigger geometry does not fit."""


class FormatError(PsdLabError, ValueError):
    """A binary file has a bad magic, version or length."""


class ConsistencyError(PsdLabError, ValueError):
    """Two inputs that must agree do not."""


class PlanError(PsdLabError, ValueError):
    """A poisoning plan cannot be realised on the given dataset."""


class ParameterError(PsdLabError, ValueError):
    """A parameter is outside its allowed range."""


class GroupingError(PsdLabError, ValueError):
    """A grouping has an empty side."""


class UndefinedMetricError(PsdLabError, ValueError):
    """A statistic is undefined for the given input (0/0, zero variance)."""


class ReferenceSetError(PsdLabError, ValueError):
    """The reference clean set lacks a class a detector needs."""


class ConfigError(PsdLabError, ValueError):
    """The run configuration is invalid."""


class TrainingDivergedError(PsdLabError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        # args mirror the signature so sweep workers can pickle it
        super().__init__(epoch, loss)
        self.epoch = epoch
        self.loss = loss

    def __str__(self) -> str:
        return f"training diverged at epoch {self.epoch} (loss={self.loss})"


class StageError(PsdLabError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(stage, cause)
        self.stage = stage
        self.cause = cause

    def __str__(self) -> str:
        return f"stage '{self.stage}' failed: {self.cause}"
