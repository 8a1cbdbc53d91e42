"""Service layer for building, training, evaluating and snapshotting the toy model."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.autodiff import ComputeGraph, Tensor
from app.config import LOSS_LOG_EVERY
from app.models import Dataset, ParameterRegistry, TransformerModel
from app.models.transformer import initial_value, parameter_layout, registry_from_layout
from app.schemas.config_schemas import ModelConfig
from app.schemas.report_schemas import ErrorRates
from app.services import metrics_service
from app.services.exceptions import (
    ArgumentError,
    CheckpointMismatchError,
    SnapshotError,
    TrainingError,
)
from app.storage import files

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParameterSnapshot:
    """Copy of every parameter array, keyed by parameter id."""
    config: ModelConfig
    arrays: Dict[str, np.ndarray]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays.values())


def build(config: ModelConfig) -> Tuple[TransformerModel, ParameterRegistry]:
    """Create a freshly initialised model and its registry.

    Weights are drawn from a seeded Gaussian (std 0.02) in registry order,
    biases and layer-norm shifts start at zero, layer-norm gains at one and
    the encoder positional table at sinusoids.
    """
    layout = parameter_layout(config)
    registry = registry_from_layout(layout)
    rng = np.random.default_rng(config.seed)
    params = {
        spec.parameter_id: Tensor(initial_value(spec, rng), requires_grad=True, name=spec.parameter_id)
        for spec in layout
    }
    logger.debug(f"Built model with {registry.total_count} parameters in {len(registry)} tensors")
    return TransformerModel(config, params, registry), registry


def forward(model: TransformerModel, frames: np.ndarray, tgt_tokens: Sequence[int]) -> Tensor:
    """Teacher-forced logits [len(tgt_tokens), vocab]."""
    return model.forward(frames, tgt_tokens)


def greedy_decode(model: TransformerModel, frames: np.ndarray, max_len: Optional[int] = None) -> List[int]:
    """Argmax decoding; stops at EOT or after ``max_len`` tokens (default: the config maximum)."""
    return model.greedy_decode(frames, model.config.max_tgt_len if max_len is None else max_len)


def decode_dataset(model: TransformerModel, dataset: Dataset) -> List[List[int]]:
    return [greedy_decode(model, item.frames) for item in dataset.items]


def evaluate(model: TransformerModel, dataset: Dataset) -> ErrorRates:
    """Greedy-decode every utterance and score the corpus."""
    return metrics_service.wer(dataset.references, decode_dataset(model, dataset))


def sample_loss_and_grad(model: TransformerModel, frames: np.ndarray, target: Sequence[int]) -> float:
    """Accumulate d loss / d theta of one utterance into the parameter grads; return the loss."""
    with ComputeGraph() as graph:
        loss = model.loss(frames, target)
    graph.backward(loss, parameters=model.parameters())
    return loss.item()


def train(
    model: TransformerModel,
    dataset: Dataset,
    steps: int,
    lr: float,
    batch: int,
    seed: int = 0,
) -> List[float]:
    """Plain SGD with a fixed learning rate.

    Each step draws ``batch`` distinct utterances, averages their per-sample
    gradients and updates the parameters in place. The sinusoidal encoder
    table is not updated.

    Returns:
        Mean NLL of every step, in order.

    Raises:
        ArgumentError: empty dataset.
        TrainingError: the loss became NaN or infinite.
    """
    if len(dataset) == 0:
        raise ArgumentError("Cannot train on an empty dataset")
    rng = np.random.default_rng(seed)
    size = min(batch, len(dataset))
    params = model.trainable_parameters()
    curve: List[float] = []

    for step in range(1, steps + 1):
        model.zero_grad()
        picks = rng.choice(len(dataset), size=size, replace=False)
        total = 0.0
        for index in picks:
            item = dataset.items[int(index)]
            total += sample_loss_and_grad(model, item.frames, item.target)
        mean_loss = total / size
        if not math.isfinite(mean_loss):
            raise TrainingError(step, mean_loss)
        for p in params:
            p.data -= (lr / size) * p.grad
        curve.append(mean_loss)
        if step % LOSS_LOG_EVERY == 0 or step == steps:
            logger.info(f"step {step}/{steps} loss={mean_loss:.4f}")

    model.clear_grad()
    return curve


def snapshot(model: TransformerModel) -> ParameterSnapshot:
    return ParameterSnapshot(
        config=model.config,
        arrays={pid: p.data.copy() for pid, p in model.named_parameters()},
    )


def restore(model: TransformerModel, snap: ParameterSnapshot) -> None:
    """Write the snapshot back into the model's arrays."""
    if snap.config != model.config:
        raise SnapshotError("Snapshot was taken from a model with a different config")
    for pid, p in model.named_parameters():
        np.copyto(p.data, snap.arrays[pid])


def clone(model: TransformerModel, snap: Optional[ParameterSnapshot] = None) -> TransformerModel:
    """Independent model holding a copy of ``snap`` (or of the model's current weights)."""
    source = snap if snap is not None else snapshot(model)
    if source.config != model.config:
        raise SnapshotError("Snapshot was taken from a model with a different config")
    params = {
        pid: Tensor(source.arrays[pid], requires_grad=True, name=pid)
        for pid in model.registry.ids
    }
    return TransformerModel(model.config, params, model.registry)


def parameter_bytes(model: TransformerModel, exclude: Sequence[str] = ()) -> Dict[str, bytes]:
    skip = set(exclude)
    return {pid: p.data.tobytes() for pid, p in model.named_parameters() if pid not in skip}


def save_checkpoint(model: TransformerModel, path: Path, config_hash: str) -> None:
    files.save_checkpoint(path, model.config, {pid: p.data for pid, p in model.named_parameters()}, config_hash)
    logger.info(f"Checkpoint written to {path}")


def load_checkpoint(path: Path, expected: ModelConfig) -> Tuple[TransformerModel, ParameterRegistry]:
    """Rebuild a model from a checkpoint written for ``expected``."""
    stored_config, arrays, _ = files.load_checkpoint(path)
    if stored_config != expected:
        raise CheckpointMismatchError(f"Checkpoint {path} was written for a different model config")
    model, registry = build(expected)
    for pid, p in model.named_parameters():
        if pid not in arrays or arrays[pid].shape != p.shape:
            raise CheckpointMismatchError(f"Checkpoint {path} is missing or misshapes '{pid}'")
        np.copyto(p.data, arrays[pid])
    return model, registry
