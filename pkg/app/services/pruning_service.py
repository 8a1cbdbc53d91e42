"""One-shot unstructured magnitude pruning.

A selector's weights are pooled in registry order and ranked by absolute value
with a stable sort; the floor(rho * d) smallest are set to zero. Ties at the
threshold therefore fall to the earlier (parameter, flat index) position, which
keeps masks nested in rho.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.models import BLOCK_KINDS, WEIGHT_KINDS, Block, ParameterRegistry, Side
from app.models.registry import Selector
from app.models.transformer import TransformerModel
from app.services.exceptions import ArgumentError
from app.storage import files

logger = logging.getLogger(__name__)


@dataclass
class PruneMask:
    """Retained-weight booleans for every parameter a pruning call touched."""
    selector: Selector
    rho: float
    retained: Dict[str, np.ndarray]
    threshold: Optional[float] = None

    @property
    def total(self) -> int:
        return sum(bits.size for bits in self.retained.values())

    @property
    def pruned_count(self) -> int:
        return sum(int(bits.size - np.count_nonzero(bits)) for bits in self.retained.values())

    @property
    def achieved_rho(self) -> float:
        return self.pruned_count / self.total if self.total else 0.0

    def pruned_indices(self) -> List[Tuple[str, int]]:
        """(parameter id, flat index) of every pruned weight."""
        out: List[Tuple[str, int]] = []
        for pid, bits in self.retained.items():
            out.extend((pid, int(i)) for i in np.flatnonzero(~bits.reshape(-1)))
        return out


def check_rho(rho: float) -> None:
    if not 0.0 <= rho <= 1.0 or math.isnan(rho):
        raise ArgumentError(f"Sparsity {rho} outside [0, 1]")


def pruned_count_for(rho: float, size: int) -> int:
    return int(math.floor(rho * size))


def rank_pool(model: TransformerModel, parameter_ids: Sequence[str], rho: float) -> Tuple[np.ndarray, float]:
    """Pooled positions to prune (stable magnitude order) and the threshold tau."""
    magnitudes = np.concatenate([np.abs(model.params[pid].data).reshape(-1) for pid in parameter_ids])
    k = pruned_count_for(rho, magnitudes.size)
    order = np.argsort(magnitudes, kind="stable")
    tau = float(magnitudes[order[k - 1]]) if k > 0 else -math.inf
    return order[:k], tau


def magnitude_threshold(model: TransformerModel, registry: ParameterRegistry, selector: Selector, rho: float) -> float:
    """The floor(rho * d)-th smallest |w| over the selector's pooled weights (-inf for rho = 0)."""
    check_rho(rho)
    return rank_pool(model, registry.resolve(selector), rho)[1]


def prune_ids(model: TransformerModel, parameter_ids: Sequence[str], rho: float, selector: Selector) -> PruneMask:
    """Prune one pool made of ``parameter_ids`` and zero the selected weights."""
    check_rho(rho)
    positions, tau = rank_pool(model, parameter_ids, rho)
    pooled_keep = np.ones(sum(model.params[pid].size for pid in parameter_ids), dtype=bool)
    pooled_keep[positions] = False

    retained: Dict[str, np.ndarray] = {}
    offset = 0
    for pid in parameter_ids:
        param = model.params[pid]
        keep = pooled_keep[offset:offset + param.size].reshape(param.shape)
        offset += param.size
        param.data[~keep] = 0.0
        retained[pid] = keep
    return PruneMask(selector=selector, rho=rho, retained=retained, threshold=tau)


def prune(model: TransformerModel, registry: ParameterRegistry, selector: Selector, rho: float) -> PruneMask:
    """Magnitude-prune the selector's pooled weights to sparsity floor(rho * d) / d.

    Raises:
        ArgumentError: rho outside [0, 1].
        SelectorError: the selector matches nothing.
    """
    mask = prune_ids(model, registry.resolve(selector), rho, selector)
    logger.debug(f"Pruned {selector} at rho={rho}: {mask.pruned_count}/{mask.total}")
    return mask


def global_selector() -> Selector:
    """Every weight matrix and embedding table; biases and layer norms stay out."""
    return Selector.of(None, *WEIGHT_KINDS)


def side_selector(side: Side) -> Selector:
    return Selector.of(side, *WEIGHT_KINDS)


def prune_global(model: TransformerModel, registry: ParameterRegistry, rho: float) -> PruneMask:
    """One pooled threshold over all weight parameters of the model."""
    return prune(model, registry, global_selector(), rho)


def prune_side(model: TransformerModel, registry: ParameterRegistry, side: Side, rho: float) -> PruneMask:
    """One pooled threshold over the weights of the encoder or the decoder alone."""
    return prune(model, registry, side_selector(side), rho)


def block_layers(num_layers: int) -> Dict[Block, Tuple[int, int]]:
    """Split layers 1..L into early/mid/late; the first L % 3 blocks take one extra layer."""
    if num_layers < 3:
        raise ArgumentError(f"Layer blocks need at least 3 layers, got {num_layers}")
    base, extra = divmod(num_layers, 3)
    ranges: Dict[Block, Tuple[int, int]] = {}
    start = 1
    for index, block in enumerate(Block):
        size = base + (1 if index < extra else 0)
        ranges[block] = (start, start + size - 1)
        start += size
    return ranges


def block_selector(registry: ParameterRegistry, side: Side, block: Block) -> Selector:
    layers = block_layers(len(registry.layers_on(side)))[block]
    on_side = {e.tag.kind for e in registry.entries if e.tag.side == side}
    kinds = [k for k in BLOCK_KINDS if k in on_side]
    return Selector.of(side, *kinds, layers=layers)


def prune_layer_block(
    model: TransformerModel,
    registry: ParameterRegistry,
    side: Side,
    block: Block,
    rho: float,
) -> PruneMask:
    """Prune attention and FFN weights of one layer block, thresholding each layer on its own."""
    check_rho(rho)
    selector = block_selector(registry, side, block)
    low, high = selector.layers
    retained: Dict[str, np.ndarray] = {}
    for layer in range(low, high + 1):
        per_layer = Selector(side=side, kinds=selector.kinds, layers=(layer, layer))
        retained.update(prune(model, registry, per_layer, rho).retained)
    return PruneMask(selector=selector, rho=rho, retained=retained)


def apply_mask(model: TransformerModel, mask: PruneMask) -> None:
    """Zero every weight the mask does not retain (idempotent)."""
    for pid, keep in mask.retained.items():
        model.params[pid].data[~keep] = 0.0


def component_sparsity(model: TransformerModel, registry: ParameterRegistry) -> Dict[str, float]:
    """Fraction of zeros per (side, kind) present in the registry, e.g. ``decoder/ffn``."""
    zeros: Dict[str, int] = {}
    sizes: Dict[str, int] = {}
    for entry in registry.entries:
        label = f"{entry.tag.side.value}/{entry.tag.kind.value}"
        data = model.params[entry.parameter_id].data
        zeros[label] = zeros.get(label, 0) + int(data.size - np.count_nonzero(data))
        sizes[label] = sizes.get(label, 0) + data.size
    return {label: zeros[label] / sizes[label] for label in sizes}


def merge_masks(masks: Sequence[PruneMask], selector: Selector, rho: float) -> PruneMask:
    """One mask carrying the retained bits of several masks over disjoint parameters."""
    retained: Dict[str, np.ndarray] = {}
    for mask in masks:
        retained.update(mask.retained)
    return PruneMask(selector=selector, rho=rho, retained=retained)


def export_mask(mask: PruneMask, path: Path) -> None:
    info = {
        "selector": mask.selector.model_dump(mode="json"),
        "rho": mask.rho,
        "achieved_rho": mask.achieved_rho,
        "threshold": mask.threshold if mask.threshold is not None and math.isfinite(mask.threshold) else None,
    }
    files.save_mask(path, mask.retained, info)
    logger.info(f"Mask for {mask.selector} written to {path}")


def import_mask(path: Path) -> PruneMask:
    retained, meta = files.load_mask(path)
    return PruneMask(
        selector=Selector.model_validate(meta["selector"]),
        rho=meta["rho"],
        retained=retained,
        threshold=meta.get("threshold"),
    )
