"""Workflow commands: thin wrappers that wire services to artifact files."""

import logging
from pathlib import Path
from typing import Optional, Tuple

from app.models import ParameterRegistry, Split, SweepScope, CellStatus
from app.models.registry import Selector, parameter_shares
from app.models.transformer import TransformerModel
from app.schemas.config_schemas import RunConfig
from app.schemas.plan_schemas import PlanFile, PrunePlan
from app.schemas.report_schemas import ReportBundle, SensitivityReport, SweepResult
from app.services import (
    allocation_service,
    metrics_service,
    model_service,
    pruning_service,
    report_service,
    run_service,
    sensitivity_service,
    sweep_service,
)
from app.services.exceptions import CheckpointMismatchError, PlanError, PruneLabException
from app.storage import files

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.safetensors"
PRUNED_CHECKPOINT_NAME = "pruned.safetensors"
PLAN_NAME = "plan.json"
PRUNED_MASK_NAME = "pruned_mask.safetensors"
GLOBAL_MASK_NAME = "global_mask.safetensors"


def _setup(config_path: Path, out: Optional[Path]) -> Tuple[RunConfig, Path, str]:
    config = run_service.load_run_config(config_path)
    return config, run_service.resolve_output_dir(config, out), run_service.config_hash(config)


def _load_model(
    config: RunConfig,
    checkpoint: Optional[Path],
    out_dir: Path,
    hash_value: str,
) -> Tuple[TransformerModel, ParameterRegistry]:
    """Load the checkpoint and insist it was produced under this exact config."""
    path = Path(checkpoint) if checkpoint is not None else out_dir / CHECKPOINT_NAME
    try:
        _, _, stored_hash = files.load_checkpoint(path)
    except FileNotFoundError:
        raise CheckpointMismatchError(f"Checkpoint not found: {path}")
    if stored_hash != hash_value:
        raise CheckpointMismatchError(
            f"Checkpoint {path} was produced under config {stored_hash[:12]}, not {hash_value[:12]}"
        )
    return model_service.load_checkpoint(path, config.model)


def cmd_train(config_path: Path, out: Optional[Path] = None) -> Path:
    """Train the toy model; writes the checkpoint, loss curve and parameter summary."""
    config, out_dir, hash_value = _setup(config_path, out)
    splits = run_service.prepare_splits(config)
    model, registry = model_service.build(config.model)
    shares = parameter_shares(registry)
    logger.info(
        f"Training {registry.total_count} parameters "
        f"(encoder {100 * shares['encoder']:.2f}%, decoder {100 * shares['decoder']:.2f}%)"
    )
    curve = model_service.train(
        model, splits[Split.TRAIN], config.train.steps, config.train.lr, config.train.batch, seed=config.seed
    )

    checkpoint = out_dir / CHECKPOINT_NAME
    model_service.save_checkpoint(model, checkpoint, hash_value)
    report_service.write_loss_curve(out_dir, curve)
    counts = registry.side_counts()
    report_service.write_model_summary(out_dir, {
        "total_params": registry.total_count,
        "side_params": {side.value: count for side, count in counts.items()},
        "parameter_shares": shares,
        "final_loss": curve[-1] if curve else None,
    }, hash_value)
    run_service.register_artifacts(out_dir, {
        CHECKPOINT_NAME: {"steps": config.train.steps},
        report_service.LOSS_CURVE_CSV: {},
        report_service.MODEL_SUMMARY_JSON: {},
    }, hash_value, "train")
    return checkpoint


def cmd_diagnose(config_path: Path, checkpoint: Optional[Path] = None, out: Optional[Path] = None) -> SensitivityReport:
    """Gradient and Fisher sensitivity of encoder and decoder on both test splits."""
    config, out_dir, hash_value = _setup(config_path, out)
    model, registry = _load_model(config, checkpoint, out_dir, hash_value)
    splits = run_service.prepare_splits(config)
    report = sensitivity_service.diagnose(model, registry, splits, config.diagnostic_n)
    report_service.write_sensitivity(out_dir, report, hash_value)
    run_service.register_artifacts(out_dir, {
        report_service.SENSITIVITY_CSV: {"n": config.diagnostic_n},
        report_service.SENSITIVITY_JSON: {"n": config.diagnostic_n},
    }, hash_value, "diagnose")
    return report


def cmd_sweep(
    config_path: Path,
    scope: SweepScope,
    checkpoint: Optional[Path] = None,
    out: Optional[Path] = None,
    jobs: Optional[int] = None,
) -> SweepResult:
    """Run one sweep scope and write its table; failed cells are kept with status 'failed'."""
    config, out_dir, hash_value = _setup(config_path, out)
    model, registry = _load_model(config, checkpoint, out_dir, hash_value)
    splits = run_service.prepare_splits(config)
    workers = jobs if jobs is not None else config.jobs
    result = sweep_service.run_scope(SweepScope(scope), model, registry, config.sweep_grid, splits, workers)
    names = report_service.write_sweep(out_dir, result, hash_value)
    run_service.register_artifacts(out_dir, {name: {"scope": result.scope} for name in names}, hash_value, "sweep")
    if not any(cell.status == CellStatus.OK for cell in result.cells):
        raise PruneLabException(f"Every cell of the {result.scope} sweep failed")
    return result


def _resolve_plan(
    config: RunConfig,
    registry: ParameterRegistry,
    out_dir: Path,
    plan_path: Optional[Path],
    recipe: bool,
    target: Optional[float],
    epsilon: float,
) -> PrunePlan:
    if recipe:
        return allocation_service.sensitivity_recipe(config.model.dec_layers)
    if target is not None:
        sweep_json = out_dir / report_service.sweep_json_name(SweepScope.COMPONENTS.value)
        if not sweep_json.exists():
            raise PlanError(f"Greedy allocation needs a component sweep at {sweep_json}")
        sweep = SweepResult.model_validate(report_service.read_json(sweep_json)["sweep"])
        return allocation_service.greedy_allocate(sweep, registry, target, epsilon)
    path = plan_path if plan_path is not None else config.plan_file
    if path is None:
        raise PlanError("No plan given: pass --plan, --recipe or --target")
    return allocation_service.load_plan(Path(path))


def cmd_compress(
    config_path: Path,
    checkpoint: Optional[Path] = None,
    plan_path: Optional[Path] = None,
    recipe: bool = False,
    out: Optional[Path] = None,
    target: Optional[float] = None,
    epsilon: float = float("inf"),
) -> ReportBundle:
    """Apply a plan and write the pruned checkpoint, its masks and the compression table.

    The table has three rows measured on test_other: the dense baseline, the
    plan, and global magnitude pruning of the baseline removing as many
    weights as the plan.
    """
    config, out_dir, hash_value = _setup(config_path, out)
    model, registry = _load_model(config, checkpoint, out_dir, hash_value)
    plan = _resolve_plan(config, registry, out_dir, plan_path, recipe, target, epsilon)
    allocation_service.validate_plan(plan, registry)
    splits = run_service.prepare_splits(config)
    other = splits[Split.TEST_OTHER]
    planned = allocation_service.overall_sparsity(plan, registry)

    baseline = model_service.snapshot(model)
    baseline_rates = model_service.evaluate(model, other)
    baseline_cost = metrics_service.cost_report(model, registry, config.model)
    masks, cost = allocation_service.apply_plan(model, registry, plan)
    pruned_rates = model_service.evaluate(model, other)
    component_sparsity = pruning_service.component_sparsity(model, registry)
    model_service.save_checkpoint(model, out_dir / PRUNED_CHECKPOINT_NAME, hash_value)
    plan_mask = pruning_service.merge_masks(masks, Selector(), planned)
    pruning_service.export_mask(plan_mask, out_dir / PRUNED_MASK_NAME)

    model_service.restore(model, baseline)
    global_rho = allocation_service.matched_global_rho(plan, registry)
    global_mask = pruning_service.prune_global(model, registry, global_rho)
    global_rates = model_service.evaluate(model, other)
    global_cost = metrics_service.cost_report(model, registry, config.model)
    pruning_service.export_mask(global_mask, out_dir / GLOBAL_MASK_NAME)

    rows = [
        report_service.compression_row("baseline", baseline_rates, baseline_cost),
        report_service.compression_row("pruned", pruned_rates, cost),
        report_service.compression_row("global", global_rates, global_cost),
    ]
    plan_echo = PlanFile.from_plan(plan).model_dump(mode="json")
    report_service.write_compression(out_dir, rows, {
        "split": Split.TEST_OTHER.value,
        "plan": plan_echo,
        "planned_sparsity": planned,
        "global_rho": global_rho,
        "component_sparsity": component_sparsity,
        "masks": [{"selector": m.selector.label, "rho": m.rho, "achieved_rho": m.achieved_rho} for m in masks],
    }, hash_value)

    artifacts = {
        report_service.COMPRESSION_CSV: {"plan": plan_echo},
        report_service.COMPRESSION_JSON: {"plan": plan_echo},
        PRUNED_CHECKPOINT_NAME: {"plan": plan_echo},
        PRUNED_MASK_NAME: {"plan": plan_echo},
        GLOBAL_MASK_NAME: {"rho": global_rho},
    }
    if target is not None:
        allocation_service.save_plan(plan, out_dir / PLAN_NAME)
        artifacts[PLAN_NAME] = {"plan": plan_echo}
    run_service.register_artifacts(out_dir, artifacts, hash_value, "compress")
    logger.info(
        f"WER {100 * baseline_rates.wer:.2f}% -> {100 * pruned_rates.wer:.2f}% (plan), "
        f"{100 * global_rates.wer:.2f}% (global) at {100 * cost.pool_sparsity:.2f}% pool sparsity"
    )
    return ReportBundle(config_hash=hash_value, compression=rows, manifest=run_service.load_manifest(out_dir))


def cmd_report(out: Path) -> ReportBundle:
    """Merge the artifacts of an output directory into report.json and REPORT.md."""
    return report_service.write_report(Path(out))
