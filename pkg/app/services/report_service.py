"""CSV/JSON artifact writers and the consolidated report bundle."""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from app.config import CSV_SIGNIFICANT_DIGITS
from app.models import Block, CellStatus, Split
from app.schemas.report_schemas import (
    CompressionRow,
    CostReport,
    ErrorRates,
    ReportBundle,
    SensitivityReport,
    SweepCell,
    SweepResult,
)
from app.services import run_service
from app.services.exceptions import ConsistencyError
from app.storage.files import atomic_write_text

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).resolve().parent.parent / "templates"

LOSS_CURVE_CSV = "loss_curve.csv"
MODEL_SUMMARY_JSON = "model_summary.json"
SENSITIVITY_CSV = "sensitivity.csv"
SENSITIVITY_JSON = "sensitivity.json"
COMPRESSION_CSV = "compression.csv"
COMPRESSION_JSON = "compression.json"
REPORT_JSON = "report.json"
REPORT_MD = "REPORT.md"

SWEEP_HEADER = [
    "selector_side", "selector_kind", "layer_range", "sparsity_pct",
    "wer_clean", "wer_other", "delta_other", "status",
]
SENSITIVITY_HEADER = ["module", "split", "S_g", "S_h", "N"]
COMPRESSION_HEADER = ["wer_pct", "cer_pct", "total_params", "sparsity_pct", "flops", "sparse_size_bytes"]


def sweep_csv_name(scope: str) -> str:
    return f"sweep_{scope}.csv"


def sweep_json_name(scope: str) -> str:
    return f"sweep_{scope}.json"


def fmt(value: Optional[float]) -> str:
    """Fixed 6-significant-digit rendering; blanks for missing values."""
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return f"{value:.{CSV_SIGNIFICANT_DIGITS}g}"


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    atomic_write_text(path, buffer.getvalue())


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_json(path: Path) -> Dict[str, Any]:
    return json.loads(path.read_text(encoding="utf-8"))


# -- individual artifacts --------------------------------------------------------

def write_loss_curve(out_dir: Path, curve: Sequence[float]) -> None:
    write_csv(out_dir / LOSS_CURVE_CSV, ["step", "loss"], ((step, fmt(loss)) for step, loss in enumerate(curve, 1)))


def write_model_summary(out_dir: Path, summary: Dict[str, Any], hash_value: str) -> None:
    write_json(out_dir / MODEL_SUMMARY_JSON, {"config_hash": hash_value, **summary})


def sensitivity_rows(report: SensitivityReport) -> List[List[str]]:
    return [
        [e.selector.side_label, e.split.value, fmt(e.s_g), fmt(e.s_h), str(e.n)]
        for e in report.entries
    ]


def write_sensitivity(out_dir: Path, report: SensitivityReport, hash_value: str) -> None:
    write_csv(out_dir / SENSITIVITY_CSV, SENSITIVITY_HEADER, sensitivity_rows(report))
    write_json(out_dir / SENSITIVITY_JSON, {"config_hash": hash_value, "report": report.model_dump(mode="json")})


def _pct(rate: Optional[float]) -> Optional[float]:
    return None if rate is None else 100.0 * rate


def sweep_rows(result: SweepResult) -> List[List[str]]:
    """Baseline row first, then one row per cell; WER columns in percent."""
    rows = [[
        "all", "baseline", "all", fmt(0.0),
        fmt(_pct(result.baseline_clean.wer)), fmt(_pct(result.baseline_other.wer)), fmt(0.0),
        CellStatus.OK.value,
    ]]
    for cell in result.cells:
        rows.append([
            cell.selector.side_label,
            cell.selector.kind_label,
            cell.selector.layer_label,
            fmt(100.0 * cell.rho),
            fmt(_pct(cell.wer_clean)),
            fmt(_pct(cell.wer_other)),
            fmt(cell.delta_other),
            cell.status.value,
        ])
    return rows


def write_sweep(out_dir: Path, result: SweepResult, hash_value: str) -> List[str]:
    write_csv(out_dir / sweep_csv_name(result.scope), SWEEP_HEADER, sweep_rows(result))
    write_json(out_dir / sweep_json_name(result.scope), {"config_hash": hash_value, "sweep": result.model_dump(mode="json")})
    return [sweep_csv_name(result.scope), sweep_json_name(result.scope)]


def compression_row(label: str, rates: ErrorRates, cost: CostReport) -> CompressionRow:
    return CompressionRow(
        label=label,
        wer_pct=100.0 * rates.wer,
        cer_pct=100.0 * rates.cer,
        total_params=cost.nonzero_params,
        sparsity_pct=100.0 * cost.pool_sparsity,
        flops=cost.flops_per_step,
        sparse_size_bytes=cost.sparse_size_bytes,
    )


def write_compression(out_dir: Path, rows: Sequence[CompressionRow], extra: Dict[str, Any], hash_value: str) -> None:
    write_csv(out_dir / COMPRESSION_CSV, COMPRESSION_HEADER, (
        [fmt(r.wer_pct), fmt(r.cer_pct), str(r.total_params), fmt(r.sparsity_pct), fmt(r.flops), str(r.sparse_size_bytes)]
        for r in rows
    ))
    write_json(out_dir / COMPRESSION_JSON, {
        "config_hash": hash_value,
        "rows": [r.model_dump(mode="json") for r in rows],
        **extra,
    })


# -- bundle ----------------------------------------------------------------------

def _embedded_hash(out_dir: Path, name: str, expected: str) -> Dict[str, Any]:
    document = read_json(out_dir / name)
    if document.get("config_hash") != expected:
        raise ConsistencyError([expected, str(document.get("config_hash"))])
    return document


def build_bundle(out_dir: Path) -> ReportBundle:
    """Merge every registered artifact of ``out_dir`` after checking they share one config hash."""
    out_dir = Path(out_dir)
    manifest = run_service.load_manifest(out_dir)
    hash_value = run_service.check_consistency(out_dir, manifest)
    bundle = ReportBundle(config_hash=hash_value, manifest=manifest)

    for name in sorted(manifest.artifacts):
        if not name.endswith(".json"):
            continue
        document = _embedded_hash(out_dir, name, hash_value)
        if name == MODEL_SUMMARY_JSON:
            bundle.parameter_shares = document.get("parameter_shares", {})
        elif name == SENSITIVITY_JSON:
            bundle.sensitivity = SensitivityReport.model_validate(document["report"])
        elif name.startswith("sweep_"):
            result = SweepResult.model_validate(document["sweep"])
            bundle.sweeps[result.scope] = result
        elif name == COMPRESSION_JSON:
            bundle.compression = [CompressionRow.model_validate(r) for r in document["rows"]]

    first = next(iter(bundle.sweeps.values()), None)
    if first is not None:
        bundle.baseline = {
            Split.TEST_CLEAN.value: first.baseline_clean,
            Split.TEST_OTHER.value: first.baseline_other,
        }
    return bundle


def best_cells(result: SweepResult) -> Dict[str, Optional[SweepCell]]:
    """Most negative delta per split among successful cells."""
    best: Dict[str, Optional[SweepCell]] = {}
    for split, baseline, attr in (
        (Split.TEST_CLEAN.value, result.baseline_clean.wer, "wer_clean"),
        (Split.TEST_OTHER.value, result.baseline_other.wer, "wer_other"),
    ):
        scored = [
            (100.0 * (getattr(c, attr) - baseline), index, c)
            for index, c in enumerate(result.cells)
            if c.status == CellStatus.OK
        ]
        best[split] = min(scored, key=lambda t: (t[0], t[1]))[2] if scored else None
    return best


def _component_table(result: SweepResult) -> Dict[str, Any]:
    grid = sorted({c.rho for c in result.cells})
    rows = []
    for selector in result.selectors:
        by_rho = {c.rho: c for c in result.cells if c.selector == selector}
        rows.append({
            "label": selector.label,
            "values": [by_rho[r].wer_other if r in by_rho and by_rho[r].status == CellStatus.OK else None for r in grid],
        })
    return {"grid": grid, "rows": rows}


def render_markdown(bundle: ReportBundle) -> str:
    env = Environment(
        loader=FileSystemLoader(str(TEMPLATES_DIR)),
        undefined=StrictUndefined,
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
    )
    env.filters["pct"] = lambda v: "-" if v is None else f"{100.0 * v:.2f}"
    env.filters["pp"] = lambda v: "-" if v is None else f"{v:+.2f}"
    env.filters["g6"] = fmt
    components = bundle.sweeps.get("components")
    context = {
        "bundle": bundle,
        "components": _component_table(components) if components else None,
        "best": best_cells(components) if components else None,
        "blocks": bundle.sweeps.get("layer_blocks"),
        "block_names": [b.value for b in Block],
    }
    return env.get_template("report.md.j2").render(**context)


def write_report(out_dir: Path) -> ReportBundle:
    """Write report.json and REPORT.md; neither enters the manifest, so re-merging is stable."""
    out_dir = Path(out_dir)
    bundle = build_bundle(out_dir)
    atomic_write_text(out_dir / REPORT_JSON, json.dumps(bundle.model_dump(mode="json"), sort_keys=True, indent=2) + "\n")
    atomic_write_text(out_dir / REPORT_MD, render_markdown(bundle))
    logger.info(f"Report bundle written to {out_dir / REPORT_JSON}")
    return bundle
