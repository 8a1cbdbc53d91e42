"""Custom exceptions for prune-lab services."""

from typing import Any, Optional, Sequence


class PruneLabException(Exception):
    """Base exception for all prune-lab errors."""
    pass


class ConfigError(PruneLabException):
    """Run configuration is unreadable or violates a constraint."""

    def __init__(self, message: str, constraint: Optional[str] = None):
        self.constraint = constraint
        super().__init__(message)


class TrainingError(PruneLabException):
    """Training diverged."""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"Training diverged at step {step} (loss={loss})")


class CheckpointMismatchError(PruneLabException):
    """Checkpoint does not belong to the configured model."""
    pass


class SnapshotError(CheckpointMismatchError):
    """Snapshot was taken from a model with a different config."""
    pass


class PlanError(PruneLabException):
    """Prune plan is invalid."""
    pass


class OverlappingPlanError(PlanError):
    """Two plan entries select the same parameter."""

    def __init__(self, parameter_id: str, first: str, second: str):
        self.parameter_id = parameter_id
        super().__init__(
            f"Parameter '{parameter_id}' is selected by both '{first}' and '{second}'"
        )


class ConsistencyError(PruneLabException):
    """Artifacts in one output directory were produced under different configs."""

    def __init__(self, hashes: Sequence[str]):
        self.hashes = list(hashes)
        super().__init__(f"Artifacts carry different config hashes: {', '.join(self.hashes)}")


class DimensionError(PruneLabException):
    """Operand shapes do not agree."""

    def __init__(self, op: str, *shapes: Any):
        self.op = op
        self.shapes = shapes
        rendered = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class GraphStateError(PruneLabException):
    """Backward requested on a graph that holds no forward pass for the loss."""
    pass


class SequenceLengthError(PruneLabException):
    """Input sequence exceeds configured maximum."""

    def __init__(self, what: str, length: int, limit: int):
        self.length = length
        self.limit = limit
        super().__init__(f"{what} length {length} exceeds maximum {limit}")


class TokenIndexError(PruneLabException, IndexError):
    """Target token id outside the vocabulary."""

    def __init__(self, token: int, vocab_size: int):
        self.token = token
        super().__init__(f"Token id {token} out of range for vocabulary of {vocab_size}")


class SelectorError(PruneLabException):
    """Selector resolves to no parameters."""

    def __init__(self, selector: Any):
        self.selector = selector
        super().__init__(f"Selector {selector} matches no parameters")


class DegenerateModuleError(PruneLabException):
    """Module weights have zero norm."""

    def __init__(self, selector: Any):
        self.selector = selector
        super().__init__(f"Selector {selector} has zero weight norm")


class MetricError(PruneLabException):
    """Error metric cannot be computed."""
    pass


class ArgumentError(PruneLabException):
    """Invalid argument to a library call."""
    pass
