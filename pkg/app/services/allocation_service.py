"""Sensitivity-aware sparsity allocation: recipes, plan application and sweep-driven plans."""

import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Tuple

from pydantic import ValidationError

from app.models import Block, ComponentKind, ParameterRegistry, Provenance, Side, CellStatus
from app.models.registry import Selector, selectors_overlap
from app.models.transformer import TransformerModel, parameter_layout, registry_from_layout
from app.schemas.config_schemas import ModelConfig
from app.schemas.plan_schemas import PlanEntry, PlanFile, PrunePlan
from app.schemas.report_schemas import CostReport, SweepResult
from app.services import metrics_service, model_service, pruning_service
from app.services.exceptions import ArgumentError, OverlappingPlanError, PlanError, SelectorError
from app.storage.files import atomic_write_text

logger = logging.getLogger(__name__)

# Published Whisper-small dimensions.
WHISPER_SMALL = ModelConfig(
    enc_layers=12,
    dec_layers=12,
    d_model=768,
    n_heads=12,
    d_ffn=3072,
    vocab_size=51865,
    d_in=80,
    max_src_len=3000,
    max_tgt_len=448,
    conv_kernel=3,
)


def validate_plan(plan: PrunePlan, registry: ParameterRegistry) -> None:
    """Raise PlanError unless every rho is in [0, 1] and selectors are disjoint and non-empty."""
    for entry in plan.entries:
        if not 0.0 <= entry.rho <= 1.0:
            raise PlanError(f"Plan entry {entry.selector} has rho={entry.rho} outside [0, 1]")
        try:
            registry.resolve(entry.selector)
        except SelectorError as exc:
            raise PlanError(str(exc))
    clash = selectors_overlap(registry, [e.selector for e in plan.entries])
    if clash is not None:
        pid, first, second = clash
        raise OverlappingPlanError(pid, str(first), str(second))


def planned_count(plan: PrunePlan, registry: ParameterRegistry) -> int:
    """Sum of floor(rho_c * d_c) over entries."""
    validate_plan(plan, registry)
    return sum(
        pruning_service.pruned_count_for(e.rho, registry.selected_count(e.selector)) for e in plan.entries
    )


def overall_sparsity(plan: PrunePlan, registry: ParameterRegistry) -> float:
    """Planned pruned count divided by the total parameter count."""
    return planned_count(plan, registry) / registry.total_count


def matched_global_rho(plan: PrunePlan, registry: ParameterRegistry) -> float:
    """Global-pool sparsity that prunes as many weights as ``plan`` does (capped at the pool size)."""
    pool = registry.selected_count(pruning_service.global_selector())
    count = min(planned_count(plan, registry), pool)
    rho = count / pool
    while pruning_service.pruned_count_for(rho, pool) < count:
        rho = math.nextafter(rho, 2.0)
    return min(rho, 1.0)


def sensitivity_recipe(dec_layers: int, tied_output_proj: bool = False) -> PrunePlan:
    """Fixed per-component sparsities; decoder FFN follows the early/mid/late layer blocks."""
    enc, dec = Side.ENCODER, Side.DECODER
    blocks = pruning_service.block_layers(dec_layers)
    entries = [
        PlanEntry(selector=Selector.of(enc, ComponentKind.CONV), rho=0.20),
        PlanEntry(selector=Selector.of(enc, ComponentKind.SELF_ATTN), rho=0.40),
        PlanEntry(selector=Selector.of(enc, ComponentKind.FFN), rho=0.55),
        PlanEntry(selector=Selector.of(dec, ComponentKind.SELF_ATTN), rho=0.50),
        PlanEntry(selector=Selector.of(dec, ComponentKind.CROSS_ATTN), rho=0.45),
        PlanEntry(selector=Selector.of(dec, ComponentKind.FFN, layers=blocks[Block.EARLY]), rho=0.25),
        PlanEntry(selector=Selector.of(dec, ComponentKind.FFN, layers=blocks[Block.MID]), rho=0.45),
        PlanEntry(selector=Selector.of(dec, ComponentKind.FFN, layers=blocks[Block.LATE]), rho=0.30),
        PlanEntry(selector=Selector.of(dec, ComponentKind.TOKEN_EMB), rho=0.25),
    ]
    if not tied_output_proj:
        entries.append(PlanEntry(selector=Selector.of(dec, ComponentKind.OUTPUT_PROJ), rho=0.25))
    return PrunePlan(entries=entries, provenance=Provenance.RECIPE)


def apply_plan(
    model: TransformerModel,
    registry: ParameterRegistry,
    plan: PrunePlan,
) -> Tuple[List[pruning_service.PruneMask], CostReport]:
    """Prune every entry on its own threshold, then account the result.

    On any error the model is restored to its weights before the call.
    """
    validate_plan(plan, registry)
    snap = model_service.snapshot(model)
    masks = []
    try:
        for entry in plan.entries:
            masks.append(pruning_service.prune(model, registry, entry.selector, entry.rho))
    except Exception:
        model_service.restore(model, snap)
        raise
    cost = metrics_service.cost_report(model, registry, model.config)
    logger.info(f"Applied {len(plan)}-entry {plan.provenance.value} plan: pool sparsity {100 * cost.pool_sparsity:.2f}%")
    return masks, cost


def _options(sweep: SweepResult, selector: Selector, size: int, epsilon: float) -> List[Tuple[float, int, float]]:
    """(rho, pruned count, delta) choices of one selector: dense plus admissible grid points."""
    options = [(0.0, 0, 0.0)]
    for cell in sweep.cells:
        if cell.selector != selector or cell.status != CellStatus.OK or cell.rho <= 0.0:
            continue
        if cell.delta_other is not None and cell.delta_other <= epsilon:
            options.append((cell.rho, pruning_service.pruned_count_for(cell.rho, size), cell.delta_other))
    return sorted(options, key=lambda o: o[0])


def _frontier(states: List[Tuple[int, float, Tuple[int, ...]]]) -> List[Tuple[int, float, Tuple[int, ...]]]:
    """Keep states no other state beats on both pruned count and summed delta."""
    ordered = sorted(states, key=lambda s: (-s[0], s[1], s[2]))
    kept = []
    best = math.inf
    for state in ordered:
        if state[1] < best:
            kept.append(state)
            best = state[1]
    return kept


def greedy_allocate(
    sweep: SweepResult,
    registry: ParameterRegistry,
    target: float,
    epsilon: float,
) -> PrunePlan:
    """Plan reaching ``target`` overall sparsity with the least summed measured delta.

    Each swept selector may stay dense or take any grid sparsity whose measured
    delta on test_other is at most ``epsilon``. The optimum is exact over the grid
    (Pareto frontier on pruned count vs. summed delta); ties go to more pruning,
    after which entries are stepped down toward the target while the summed delta
    does not grow. When even the largest admissible choices miss the target the
    maximal plan comes back with ``feasible=False``.

    Raises:
        ArgumentError: the sweep has no cells.
        PlanError: swept selectors overlap.
    """
    if not sweep.cells:
        raise ArgumentError("Cannot allocate from an empty sweep")
    selectors = sweep.selectors
    if target <= 0.0:
        return PrunePlan(provenance=Provenance.GREEDY, target=target, epsilon=epsilon)
    clash = selectors_overlap(registry, selectors)
    if clash is not None:
        pid, first, second = clash
        raise OverlappingPlanError(pid, str(first), str(second))

    total = registry.total_count
    options = [_options(sweep, s, registry.selected_count(s), epsilon) for s in selectors]

    def build(choice: Tuple[int, ...], feasible: bool) -> PrunePlan:
        entries = [
            PlanEntry(selector=s, rho=options[i][choice[i]][0])
            for i, s in enumerate(selectors)
            if choice[i] > 0
        ]
        return PrunePlan(entries=entries, provenance=Provenance.GREEDY, feasible=feasible, target=target, epsilon=epsilon)

    maximal = tuple(len(opts) - 1 for opts in options)
    if sum(options[i][c][1] for i, c in enumerate(maximal)) / total < target:
        logger.warning(f"Target sparsity {target} unreachable within epsilon={epsilon}; returning maximal plan")
        return build(maximal, feasible=False)

    states: List[Tuple[int, float, Tuple[int, ...]]] = [(0, 0.0, ())]
    for opts in options:
        states = _frontier([
            (count + o_count, delta + o_delta, choice + (j,))
            for count, delta, choice in states
            for j, (_, o_count, o_delta) in enumerate(opts)
        ])
    feasible_states = [s for s in states if s[0] / total >= target]
    _, _, best = min(feasible_states, key=lambda s: (s[1], -s[0], s[2]))

    # Step entries down toward the target without raising the summed delta.
    choice = list(best)
    changed = True
    while changed:
        changed = False
        for i, opts in enumerate(options):
            if choice[i] == 0:
                continue
            lower = choice[i] - 1
            count = sum(options[k][choice[k]][1] for k in range(len(options))) - opts[choice[i]][1] + opts[lower][1]
            if count / total >= target and opts[lower][2] <= opts[choice[i]][2]:
                choice[i] = lower
                changed = True
    return build(tuple(choice), feasible=True)


def plan_delta(plan: PrunePlan, sweep: SweepResult) -> float:
    """Summed measured delta of a plan's entries (dense entries count as zero)."""
    total = 0.0
    for entry in plan.entries:
        cell = sweep.cell(entry.selector, entry.rho)
        if cell is None or cell.delta_other is None:
            raise PlanError(f"Sweep has no measurement for {entry.selector} at {entry.rho}")
        total += cell.delta_other
    return total


def whisper_small_registry() -> ParameterRegistry:
    """Registry of Whisper-small built from its published dimensions.

    Key projections carry no bias and the output projection is tied to the
    token embedding, so neither is registered.
    """
    layout = [
        spec for spec in parameter_layout(WHISPER_SMALL)
        if not spec.parameter_id.endswith("attn.k.bias") and spec.tag.kind != ComponentKind.OUTPUT_PROJ
    ]
    return registry_from_layout(layout)


def recipe_audit() -> Dict[str, float]:
    registry = whisper_small_registry()
    plan = sensitivity_recipe(WHISPER_SMALL.dec_layers, tied_output_proj=True)
    counts = registry.side_counts()
    return {
        "total_params": float(registry.total_count),
        "encoder_params": float(counts[Side.ENCODER]),
        "decoder_params": float(counts[Side.DECODER]),
        "overall_sparsity": overall_sparsity(plan, registry),
    }


def load_plan(path: Path) -> PrunePlan:
    """Parse a plan file; any syntax or schema problem is a PlanError."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
        return PlanFile.model_validate(document).to_plan()
    except FileNotFoundError:
        raise PlanError(f"Plan file not found: {path}")
    except (json.JSONDecodeError, ValidationError) as exc:
        raise PlanError(f"Cannot parse plan file {path}: {exc}")


def save_plan(plan: PrunePlan, path: Path) -> None:
    atomic_write_text(Path(path), PlanFile.from_plan(plan).model_dump_json(indent=2) + "\n")
    logger.info(f"Plan written to {path}")
