"""Pydantic schemas for prune plans and the plan file."""

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

from app.config import FORMAT_VERSION
from app.models import Provenance
from app.models.registry import Selector


class PlanEntry(BaseModel):
    """One (selector, target sparsity) pair."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    selector: Selector
    rho: float = Field(..., ge=0.0, le=1.0, description="Target sparsity of the selector's pooled weights")


class PrunePlan(BaseModel):
    """Per-component sparsity assignment; unlisted components stay dense."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    entries: List[PlanEntry] = Field(default_factory=list)
    provenance: Provenance = Provenance.MANUAL
    feasible: bool = Field(True, description="False when an allocator could not reach its target")
    target: Optional[float] = Field(None, description="Overall sparsity the allocator aimed for")
    epsilon: Optional[float] = Field(None, description="Per-selector delta budget used by the allocator")

    def __len__(self) -> int:
        return len(self.entries)


class PlanFile(BaseModel):
    """On-disk plan: ``{"format_version": 1, "provenance": ..., "entries": [...]}``."""
    model_config = ConfigDict(extra="forbid")

    format_version: int = FORMAT_VERSION
    provenance: Provenance = Provenance.MANUAL
    feasible: bool = True
    target: Optional[float] = None
    epsilon: Optional[float] = None
    entries: List[PlanEntry] = Field(default_factory=list)

    @classmethod
    def from_plan(cls, plan: PrunePlan) -> "PlanFile":
        return cls(
            provenance=plan.provenance,
            feasible=plan.feasible,
            target=plan.target,
            epsilon=plan.epsilon,
            entries=list(plan.entries),
        )

    def to_plan(self) -> PrunePlan:
        return PrunePlan(
            entries=list(self.entries),
            provenance=self.provenance,
            feasible=self.feasible,
            target=self.target,
            epsilon=self.epsilon,
        )
