"""Pruning sweeps: every cell restores the snapshot, prunes, and re-evaluates both test splits."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from app.models import (
    CellStatus,
    ComponentKind,
    Dataset,
    ParameterRegistry,
    Side,
    Split,
    SweepScope,
    Block,
)
from app.models.registry import Selector
from app.models.transformer import TransformerModel
from app.schemas.report_schemas import ErrorRates, PlantedRedundancyResult, SweepCell, SweepResult
from app.services import metrics_service, model_service, pruning_service
from app.services.exceptions import ArgumentError, PruneLabException
from app.services.model_service import ParameterSnapshot

logger = logging.getLogger(__name__)

PruneAction = Callable[[TransformerModel, ParameterRegistry], pruning_service.PruneMask]


@dataclass(frozen=True)
class CellPlan:
    """A sweep cell before it runs."""
    selector: Selector
    rho: float
    action: PruneAction


def component_selectors() -> List[Selector]:
    """One selector per row of the component table."""
    enc, dec = Side.ENCODER, Side.DECODER
    return [
        Selector.of(enc, ComponentKind.SELF_ATTN),
        Selector.of(enc, ComponentKind.FFN),
        Selector.of(dec, ComponentKind.SELF_ATTN),
        Selector.of(dec, ComponentKind.CROSS_ATTN),
        Selector.of(dec, ComponentKind.FFN),
        Selector.of(None, ComponentKind.LAYER_NORM),
        Selector.of(None, ComponentKind.BIAS),
        Selector.of(enc, ComponentKind.CONV),
        Selector.of(enc, ComponentKind.POS_EMB),
        Selector.of(dec, ComponentKind.TOKEN_EMB),
        Selector.of(dec, ComponentKind.OUTPUT_PROJ),
    ]


def _selector_cell(selector: Selector, rho: float) -> CellPlan:
    return CellPlan(selector, rho, lambda m, r: pruning_service.prune(m, r, selector, rho))


def _block_cell(registry: ParameterRegistry, side: Side, block: Block, rho: float) -> CellPlan:
    selector = pruning_service.block_selector(registry, side, block)
    return CellPlan(selector, rho, lambda m, r: pruning_service.prune_layer_block(m, r, side, block, rho))


def _evaluate_cell(
    model: TransformerModel,
    registry: ParameterRegistry,
    cell: CellPlan,
    clean: Dataset,
    other: Dataset,
    baseline_other: ErrorRates,
) -> SweepCell:
    try:
        mask = cell.action(model, registry)
        clean_rates = model_service.evaluate(model, clean)
        other_rates = model_service.evaluate(model, other)
    except PruneLabException as exc:
        logger.warning(f"Sweep cell {cell.selector} @ {cell.rho} failed: {exc}")
        return SweepCell(selector=cell.selector, rho=cell.rho, status=CellStatus.FAILED, error=str(exc))
    delta = metrics_service.delta_wer(baseline_other, other_rates)
    logger.info(
        f"{cell.selector} @ {cell.rho:.2f}: wer_clean={100 * clean_rates.wer:.2f}% "
        f"wer_other={100 * other_rates.wer:.2f}% delta={delta:+.2f}"
    )
    return SweepCell(
        selector=cell.selector,
        rho=cell.rho,
        achieved_rho=mask.achieved_rho,
        wer_clean=clean_rates.wer,
        wer_other=other_rates.wer,
        delta_other=delta,
    )


def run_cells(
    model: TransformerModel,
    registry: ParameterRegistry,
    cells: Sequence[CellPlan],
    clean: Dataset,
    other: Dataset,
    scope: str,
    jobs: int = 1,
) -> SweepResult:
    """Evaluate every cell from the same starting weights.

    With ``jobs > 1`` cells are dealt round-robin to worker threads, each owning
    a clone of the model; results come back in request order either way. The
    model is restored to its pre-sweep weights before returning.
    """
    if not cells:
        raise ArgumentError("Sweep has no cells")
    snap = model_service.snapshot(model)
    baseline_clean = model_service.evaluate(model, clean)
    baseline_other = model_service.evaluate(model, other)
    results: List[Optional[SweepCell]] = [None] * len(cells)

    def work(worker_model: TransformerModel, indices: Sequence[int]) -> None:
        for index in indices:
            model_service.restore(worker_model, snap)
            results[index] = _evaluate_cell(worker_model, registry, cells[index], clean, other, baseline_other)

    try:
        if jobs <= 1:
            work(model, range(len(cells)))
        else:
            chunks = [list(range(start, len(cells), jobs)) for start in range(min(jobs, len(cells)))]
            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                futures = [pool.submit(work, model_service.clone(model, snap), chunk) for chunk in chunks]
                for future in futures:
                    future.result()
    finally:
        model_service.restore(model, snap)

    failed = sum(1 for cell in results if cell is not None and cell.status == CellStatus.FAILED)
    if failed:
        logger.warning(f"{failed}/{len(cells)} sweep cells failed")
    return SweepResult(
        scope=scope,
        baseline_clean=baseline_clean,
        baseline_other=baseline_other,
        cells=[cell for cell in results if cell is not None],
    )


def component_sweep(
    model: TransformerModel,
    registry: ParameterRegistry,
    selectors: Sequence[Selector],
    rho_grid: Sequence[float],
    clean: Dataset,
    other: Dataset,
    jobs: int = 1,
) -> SweepResult:
    """Prune each selector on its own at every grid sparsity."""
    cells = [_selector_cell(s, rho) for s in selectors for rho in rho_grid]
    return run_cells(model, registry, cells, clean, other, SweepScope.COMPONENTS.value, jobs)


def layer_block_sweep(
    model: TransformerModel,
    registry: ParameterRegistry,
    clean: Dataset,
    other: Dataset,
    rho: float = 0.5,
    jobs: int = 1,
) -> SweepResult:
    """Early/mid/late blocks of encoder and decoder, one cell each."""
    cells = [
        _block_cell(registry, side, block, rho)
        for side in (Side.ENCODER, Side.DECODER)
        for block in Block
    ]
    return run_cells(model, registry, cells, clean, other, SweepScope.LAYER_BLOCKS.value, jobs)


def global_sweep(
    model: TransformerModel,
    registry: ParameterRegistry,
    rho_grid: Sequence[float],
    clean: Dataset,
    other: Dataset,
    jobs: int = 1,
) -> SweepResult:
    """Whole-model pruning with one pooled threshold per sparsity."""
    cells = [_selector_cell(pruning_service.global_selector(), rho) for rho in rho_grid]
    return run_cells(model, registry, cells, clean, other, SweepScope.GLOBAL.value, jobs)


def side_sweep(
    model: TransformerModel,
    registry: ParameterRegistry,
    rho_grid: Sequence[float],
    clean: Dataset,
    other: Dataset,
    jobs: int = 1,
) -> SweepResult:
    """Encoder-only and decoder-only pruning at every grid sparsity."""
    cells = [
        _selector_cell(pruning_service.side_selector(side), rho)
        for side in (Side.ENCODER, Side.DECODER)
        for rho in rho_grid
    ]
    return run_cells(model, registry, cells, clean, other, SweepScope.SIDE.value, jobs)


def run_scope(
    scope: SweepScope,
    model: TransformerModel,
    registry: ParameterRegistry,
    rho_grid: Sequence[float],
    splits: Dict[Split, Dataset],
    jobs: int = 1,
) -> SweepResult:
    clean, other = splits[Split.TEST_CLEAN], splits[Split.TEST_OTHER]
    if scope == SweepScope.GLOBAL:
        return global_sweep(model, registry, rho_grid, clean, other, jobs)
    if scope == SweepScope.SIDE:
        return side_sweep(model, registry, rho_grid, clean, other, jobs)
    if scope == SweepScope.LAYER_BLOCKS:
        return layer_block_sweep(model, registry, clean, other, jobs=jobs)
    return component_sweep(model, registry, component_selectors(), rho_grid, clean, other, jobs)


def planted_redundancy_check(
    model: TransformerModel,
    registry: ParameterRegistry,
    selector: Selector,
    p: float,
    dataset: Dataset,
    seed: int = 0,
) -> PlantedRedundancyResult:
    """Plant small noisy weights, then check that pruning at the same sparsity removes them.

    A fraction ``p`` of the selector's weights, drawn among its smallest-magnitude
    half, receive Gaussian noise with std 0.5 * tau(p). The model is evaluated
    corrupted, then after magnitude pruning at ``p``; weights are restored on exit.
    """
    if not 0.0 < p < 0.5:
        raise ArgumentError(f"Planted fraction {p} must lie in (0, 0.5)")
    snap: ParameterSnapshot = model_service.snapshot(model)
    try:
        baseline = model_service.evaluate(model, dataset)
        pids = registry.resolve(selector)
        pooled = np.concatenate([model.params[pid].data.reshape(-1) for pid in pids])
        count = pruning_service.pruned_count_for(p, pooled.size)
        _, tau = pruning_service.rank_pool(model, pids, p)
        if count > 0:
            rng = np.random.default_rng(seed)
            smallest_half = np.argsort(np.abs(pooled), kind="stable")[: pooled.size // 2]
            planted = rng.choice(smallest_half, size=count, replace=False)
            pooled[planted] += rng.normal(0.0, 0.5 * tau, size=count)
            offset = 0
            for pid in pids:
                param = model.params[pid]
                param.data[...] = pooled[offset:offset + param.size].reshape(param.shape)
                offset += param.size
        corrupted = model_service.evaluate(model, dataset)
        pruning_service.prune(model, registry, selector, p)
        pruned = model_service.evaluate(model, dataset)
    finally:
        model_service.restore(model, snap)
    logger.info(
        f"Planted redundancy on {selector} p={p}: baseline={100 * baseline.wer:.2f}% "
        f"corrupted={100 * corrupted.wer:.2f}% pruned={100 * pruned.wer:.2f}%"
    )
    return PlantedRedundancyResult(
        selector=selector,
        p=p,
        wer_baseline=baseline.wer,
        wer_corrupted=corrupted.wer,
        wer_pruned=pruned.wer,
    )
