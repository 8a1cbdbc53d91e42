"""Pydantic schemas for run configuration, prune plans and report artifacts."""

from app.schemas.config_schemas import (
    DEFAULT_SWEEP_GRID,
    ModelConfig,
    TaskSpec,
    TrainConfig,
    RunConfig,
)

__all__ = [
    "DEFAULT_SWEEP_GRID",
    "ModelConfig",
    "TaskSpec",
    "TrainConfig",
    "RunConfig",
]
