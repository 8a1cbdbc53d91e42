"""Pydantic schemas for the run configuration file."""

from pathlib import Path
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

DEFAULT_SWEEP_GRID = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]


class ModelConfig(BaseModel):
    """Encoder-decoder transformer dimensions (desk-scale defaults)."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    enc_layers: int = Field(6, ge=3, description="Encoder layers (>= 3 so early/mid/late blocks exist)")
    dec_layers: int = Field(6, ge=3, description="Decoder layers (>= 3 so early/mid/late blocks exist)")
    d_model: int = Field(64, ge=1)
    n_heads: int = Field(4, ge=1)
    d_ffn: int = Field(256, ge=1)
    vocab_size: int = Field(64, ge=3, description="Includes the SOT/EOT ids 0 and 1")
    d_in: int = Field(16, ge=1, description="Frame dimensionality")
    max_src_len: int = Field(32, ge=1, description="Maximum frames per utterance")
    max_tgt_len: int = Field(16, ge=2, description="Maximum decoder input length (SOT + tokens)")
    conv_kernel: int = Field(3, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def _check_shape(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.conv_kernel % 2 == 0:
            raise ValueError(f"conv_kernel ({self.conv_kernel}) must be odd")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def enc_positions(self) -> int:
        """Encoder length after the stride-2 convolution."""
        return (self.max_src_len + 1) // 2


class TaskSpec(BaseModel):
    """Synthetic speech-proxy task definition."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(1234, ge=0, lt=2 ** 64)
    n_train: int = Field(512, ge=1)
    n_test: int = Field(256, ge=1)
    t_range: Tuple[int, int] = Field((4, 12), description="Inclusive (min, max) transcript length")
    vocab_size: int = Field(64, ge=3)
    d_in: int = Field(16, ge=1)
    sigma_clean: float = Field(0.3, ge=0.0)
    sigma_other: float = Field(0.9, ge=0.0)
    frames_per_token: int = Field(2, ge=1)

    @model_validator(mode="after")
    def _check_task(self):
        low, high = self.t_range
        if low < 1 or high < low:
            raise ValueError(f"invalid t_range {self.t_range}")
        if not self.sigma_other > self.sigma_clean:
            raise ValueError(
                f"sigma_other ({self.sigma_other}) must exceed sigma_clean ({self.sigma_clean})"
            )
        return self


class TrainConfig(BaseModel):
    """Plain SGD settings."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    steps: int = Field(2000, ge=0)
    lr: float = Field(0.2, ge=0.0)
    batch: int = Field(16, ge=1)


class RunConfig(BaseModel):
    """Everything a pipeline run depends on."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(0, ge=0, lt=2 ** 64, description="Seed for batch sampling and planted noise")
    model: ModelConfig = Field(default_factory=ModelConfig)
    task: TaskSpec = Field(default_factory=TaskSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    sweep_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_SWEEP_GRID))
    diagnostic_n: int = Field(64, ge=1)
    output_dir: Optional[Path] = None
    jobs: int = Field(1, ge=1)
    plan_file: Optional[Path] = None

    @field_validator("sweep_grid")
    @classmethod
    def _check_grid(cls, grid: List[float]) -> List[float]:
        if not grid:
            raise ValueError("sweep_grid must not be empty")
        for rho in grid:
            if not 0.0 <= rho <= 1.0:
                raise ValueError(f"sweep_grid value {rho} outside [0, 1]")
        return grid

    @model_validator(mode="after")
    def _check_pairing(self):
        if self.task.vocab_size != self.model.vocab_size:
            raise ValueError(
                f"task vocab_size ({self.task.vocab_size}) must match model vocab_size ({self.model.vocab_size})"
            )
        if self.task.d_in != self.model.d_in:
            raise ValueError(f"task d_in ({self.task.d_in}) must match model d_in ({self.model.d_in})")
        longest = self.task.t_range[1]
        if self.task.frames_per_token * longest > self.model.max_src_len:
            raise ValueError(
                f"max_src_len ({self.model.max_src_len}) is shorter than the longest utterance "
                f"({self.task.frames_per_token * longest} frames)"
            )
        if longest + 1 > self.model.max_tgt_len:
            raise ValueError(
                f"max_tgt_len ({self.model.max_tgt_len}) cannot hold SOT + {longest} tokens"
            )
        return self
