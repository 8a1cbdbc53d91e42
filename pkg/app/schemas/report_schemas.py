"""Pydantic schemas for metrics, sweep tables, diagnostics and the report bundle."""

from datetime import datetime
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from app.models import CellStatus, Split
from app.models.registry import Selector


class ErrorRates(BaseModel):
    """Corpus-level word and character error rates (fractions, not percent)."""
    model_config = ConfigDict(frozen=True)

    wer: float = Field(..., ge=0.0)
    cer: float = Field(..., ge=0.0)
    substitutions: int = Field(..., ge=0)
    deletions: int = Field(..., ge=0)
    insertions: int = Field(..., ge=0)
    ref_len: int = Field(..., ge=1)


class CostReport(BaseModel):
    """Parameter, sparsity, FLOP and storage accounting of one model state."""
    model_config = ConfigDict(frozen=True)

    total_params: int
    nonzero_params: int
    sparsity: float = Field(..., ge=0.0, le=1.0, description="1 - nonzero_params / total_params")
    pool_params: int = Field(..., description="Size of the global pruning pool")
    pool_sparsity: float = Field(..., ge=0.0, le=1.0, description="Fraction of zeros in the global pruning pool")
    dense_flops: float = Field(..., description="FLOPs of one reference utterance with dense weights")
    flops_per_step: float = Field(..., description="Dense FLOPs scaled by each weight tensor's density")
    sparse_size_bytes: int


class SweepCell(BaseModel):
    """One (selector, rho) evaluation."""
    selector: Selector
    rho: float
    achieved_rho: Optional[float] = None
    wer_clean: Optional[float] = None
    wer_other: Optional[float] = None
    delta_other: Optional[float] = Field(None, description="Percentage points vs. baseline on test_other")
    status: CellStatus = CellStatus.OK
    error: Optional[str] = None


class SweepResult(BaseModel):
    """Empirical sensitivity record of one sweep."""
    scope: str
    baseline_clean: ErrorRates
    baseline_other: ErrorRates
    cells: List[SweepCell] = Field(default_factory=list)

    def cell(self, selector: Selector, rho: float) -> Optional[SweepCell]:
        for cell in self.cells:
            if cell.selector == selector and cell.rho == rho:
                return cell
        return None

    @property
    def selectors(self) -> List[Selector]:
        seen: List[Selector] = []
        for cell in self.cells:
            if cell.selector not in seen:
                seen.append(cell.selector)
        return seen


class SensitivityEntry(BaseModel):
    """S_g and S_h of one module on one split."""
    selector: Selector
    split: Split
    s_g: float = Field(..., ge=0.0)
    s_h: float = Field(..., ge=0.0)
    n: int = Field(..., ge=1)


class SensitivityReport(BaseModel):
    entries: List[SensitivityEntry] = Field(default_factory=list)


class CompressionRow(BaseModel):
    """One row of the compression table (baseline or pruned)."""
    label: str
    wer_pct: float
    cer_pct: float
    total_params: int = Field(..., description="Remaining (nonzero) parameters")
    sparsity_pct: float
    flops: float
    sparse_size_bytes: int


class PlantedRedundancyResult(BaseModel):
    selector: Selector
    p: float
    wer_baseline: float
    wer_corrupted: float
    wer_pruned: float


class ArtifactRecord(BaseModel):
    """Provenance of one artifact file in the output directory."""
    config_hash: str
    sha256: str
    created_at: datetime
    command: str
    details: Dict[str, Any] = Field(default_factory=dict)


class Manifest(BaseModel):
    format_version: int
    versions: Dict[str, str] = Field(default_factory=dict)
    artifacts: Dict[str, ArtifactRecord] = Field(default_factory=dict)


class ReportBundle(BaseModel):
    """Everything one output directory holds, merged and hash-checked."""
    config_hash: str
    parameter_shares: Dict[str, float] = Field(default_factory=dict)
    baseline: Dict[str, ErrorRates] = Field(default_factory=dict)
    sensitivity: Optional[SensitivityReport] = None
    sweeps: Dict[str, SweepResult] = Field(default_factory=dict)
    compression: List[CompressionRow] = Field(default_factory=list)
    manifest: Manifest
