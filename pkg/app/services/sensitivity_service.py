"""First-order (normalised gradient) and second-order (Fisher diagonal) sensitivity."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from app.autodiff import ComputeGraph, ops
from app.models import Dataset, ParameterRegistry, Side, Split, Utterance
from app.models.registry import Selector
from app.models.transformer import TransformerModel
from app.schemas.report_schemas import SensitivityEntry, SensitivityReport
from app.services.exceptions import ArgumentError, DegenerateModuleError

logger = logging.getLogger(__name__)

DIAGNOSTIC_MODULES = (Selector(side=Side.ENCODER), Selector(side=Side.DECODER))
DIAGNOSTIC_SPLITS = (Split.TEST_CLEAN, Split.TEST_OTHER)


@dataclass
class FisherDiagonal:
    """Mean squared per-sample gradient of every parameter element."""
    values: Dict[str, np.ndarray]
    n: int


def _per_sample_grads(model: TransformerModel, item: Utterance, loss_scale: float) -> None:
    """Leave d(loss_scale * L(x, y))/d theta in every parameter's ``grad``."""
    model.clear_grad()
    with ComputeGraph() as graph:
        loss = model.loss(item.frames, item.target)
        if loss_scale != 1.0:
            loss = ops.scale(loss, loss_scale)
    graph.backward(loss, parameters=model.parameters())


def _accumulate(
    model: TransformerModel,
    registry: ParameterRegistry,
    batch: Sequence[Utterance],
    selectors: Sequence[Selector],
    loss_scale: float = 1.0,
) -> Tuple[List[float], Dict[str, np.ndarray]]:
    """One pass of per-sample gradients.

    Returns:
        Per-selector sums of ||g_m||_2 over the batch, and per-parameter sums of g^2.
    """
    if not batch:
        raise ArgumentError("Sensitivity needs a non-empty batch")
    members = [registry.resolve(s) for s in selectors]
    norm_sums = [0.0] * len(selectors)
    squared = {pid: np.zeros(p.shape) for pid, p in model.named_parameters()}

    for item in batch:
        _per_sample_grads(model, item, loss_scale)
        for index, pids in enumerate(members):
            norm_sums[index] += math.sqrt(sum(float(np.sum(model.params[pid].grad ** 2)) for pid in pids))
        for pid, p in model.named_parameters():
            squared[pid] += p.grad ** 2
    model.clear_grad()
    return norm_sums, squared


def weight_norm(model: TransformerModel, registry: ParameterRegistry, selector: Selector) -> float:
    """||theta_m||_2 over the selector's pooled parameters."""
    return math.sqrt(sum(float(np.sum(model.params[pid].data ** 2)) for pid in registry.resolve(selector)))


def first_order_score(
    model: TransformerModel,
    registry: ParameterRegistry,
    batch: Sequence[Utterance],
    selector: Selector,
    loss_scale: float = 1.0,
) -> float:
    """S_g: mean per-sample gradient norm of the module divided by the module's weight norm.

    Args:
        loss_scale: multiplies the loss before differentiation (S_g scales with it).

    Raises:
        DegenerateModuleError: the module's weights are all zero.
        ArgumentError: empty batch.
    """
    norm = weight_norm(model, registry, selector)
    if norm == 0.0:
        raise DegenerateModuleError(selector)
    norm_sums, _ = _accumulate(model, registry, batch, [selector], loss_scale)
    return norm_sums[0] / len(batch) / norm


def fisher_diag(model: TransformerModel, registry: ParameterRegistry, batch: Sequence[Utterance]) -> FisherDiagonal:
    """F_jj = (1/N) sum_i (dL(x_i, y_i)/d theta_j)^2 with batch size one per term."""
    _, squared = _accumulate(model, registry, batch, [])
    count = float(len(batch))
    return FisherDiagonal(values={pid: s / count for pid, s in squared.items()}, n=len(batch))


def module_fisher(fisher: FisherDiagonal, registry: ParameterRegistry, selector: Selector) -> float:
    """S_h: arithmetic mean of F_jj over the selector's parameters."""
    pids = registry.resolve(selector)
    total = sum(float(np.sum(fisher.values[pid])) for pid in pids)
    return total / sum(fisher.values[pid].size for pid in pids)


def diagnose(
    model: TransformerModel,
    registry: ParameterRegistry,
    splits: Dict[Split, Dataset],
    n: int,
    modules: Sequence[Selector] = DIAGNOSTIC_MODULES,
) -> SensitivityReport:
    """S_g and S_h of each module on the first ``n`` utterances of each test split.

    One per-sample backward pass per utterance feeds every module's gradient
    norm and the Fisher diagonal.
    """
    norms = [weight_norm(model, registry, selector) for selector in modules]
    for selector, norm in zip(modules, norms):
        if norm == 0.0:
            raise DegenerateModuleError(selector)
    entries: List[SensitivityEntry] = []
    for split in DIAGNOSTIC_SPLITS:
        batch = splits[split].head(n).items
        norm_sums, squared = _accumulate(model, registry, batch, modules)
        fisher = FisherDiagonal(values={pid: s / float(len(batch)) for pid, s in squared.items()}, n=len(batch))
        for selector, norm, norm_sum in zip(modules, norms, norm_sums):
            s_g = norm_sum / len(batch) / norm
            s_h = module_fisher(fisher, registry, selector)
            entries.append(SensitivityEntry(selector=selector, split=split, s_g=s_g, s_h=s_h, n=len(batch)))
            logger.info(f"{selector.side_label} on {split.value}: S_g={s_g:.6g} S_h={s_h:.6g} (N={len(batch)})")
    return SensitivityReport(entries=entries)
