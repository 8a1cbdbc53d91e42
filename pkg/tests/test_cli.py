import csv
import json

import numpy as np
import pytest

from app.main import main
from app.services import model_service, pruning_service, run_service, task_service
from conftest import tiny_run_config, write_config


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


def _run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture
def run_dir(tmp_path):
    """A config file and an output directory holding a trained checkpoint."""
    config = write_config(tmp_path / "config.json", tiny_run_config())
    out = tmp_path / "out"
    assert _run("train", "--config", config, "--out", out) == 0
    return config, out


class TestConfigErrors:
    def test_missing_config(self, tmp_path):
        assert _run("train", "--config", tmp_path / "absent.json", "--out", tmp_path / "out") == 2

    def test_constraint_violation(self, tmp_path):
        document = tiny_run_config().model_dump(mode="json")
        document["sweep_grid"] = []
        path = tmp_path / "config.json"
        path.write_text(json.dumps(document), encoding="utf-8")
        assert _run("train", "--config", path, "--out", tmp_path / "out") == 2

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{", encoding="utf-8")
        assert _run("train", "--config", path, "--out", tmp_path / "out") == 2

    def test_non_positive_jobs(self, run_dir):
        config, out = run_dir
        with pytest.raises(SystemExit) as info:
            _run("sweep", "--config", config, "--out", out, "--scope", "global", "--jobs", "0")
        assert info.value.code == 2


class TestTrain:
    def test_artifacts(self, run_dir):
        _, out = run_dir
        curve = _rows(out / "loss_curve.csv")
        assert curve[0] == ["step", "loss"]
        assert len(curve) == 1 + 5
        summary = json.loads((out / "model_summary.json").read_text(encoding="utf-8"))
        assert summary["parameter_shares"]["encoder"] + summary["parameter_shares"]["decoder"] == pytest.approx(1.0)
        manifest = run_service.load_manifest(out)
        assert {"checkpoint.safetensors", "loss_curve.csv", "model_summary.json"} <= set(manifest.artifacts)

    def test_checkpoint_is_deterministic(self, run_dir, tmp_path):
        config, out = run_dir
        again = tmp_path / "again"
        assert _run("train", "--config", config, "--out", again) == 0
        assert (out / "checkpoint.safetensors").read_bytes() == (again / "checkpoint.safetensors").read_bytes()


def test_diagnose(run_dir):
    config, out = run_dir
    assert _run("diagnose", "--config", config, "--out", out) == 0
    rows = _rows(out / "sensitivity.csv")
    assert rows[0] == ["module", "split", "S_g", "S_h", "N"]
    assert [r[:2] for r in rows[1:]] == [
        ["encoder", "test_clean"], ["decoder", "test_clean"],
        ["encoder", "test_other"], ["decoder", "test_other"],
    ]
    assert all(r[4] == "2" for r in rows[1:])


class TestSweep:
    def test_layer_blocks(self, run_dir):
        config, out = run_dir
        assert _run("sweep", "--config", config, "--out", out, "--scope", "layer_blocks") == 0
        rows = _rows(out / "sweep_layer_blocks.csv")[1:]
        assert len(rows) == 7
        assert rows[0][1] == "baseline" and rows[0][6] == "0"
        assert [r[0] for r in rows[1:]] == ["encoder"] * 3 + ["decoder"] * 3

    def test_components(self, run_dir):
        config, out = run_dir
        assert _run("sweep", "--config", config, "--out", out, "--scope", "components", "--jobs", "2") == 0
        rows = _rows(out / "sweep_components.csv")[1:]
        kinds = {r[1] for r in rows[1:]}
        assert kinds == {
            "self_attn", "ffn", "cross_attn", "layer_norm", "bias", "conv", "pos_emb", "token_emb", "output_proj",
        }
        assert all(r[7] == "ok" for r in rows)

    def test_checkpoint_from_other_config(self, run_dir, tmp_path):
        _, out = run_dir
        other = write_config(tmp_path / "other.json", tiny_run_config(seed=1))
        code = _run(
            "sweep", "--config", other, "--out", tmp_path / "elsewhere",
            "--checkpoint", out / "checkpoint.safetensors", "--scope", "global",
        )
        assert code == 4

    def test_missing_checkpoint(self, tmp_path):
        config = write_config(tmp_path / "config.json", tiny_run_config())
        assert _run("sweep", "--config", config, "--out", tmp_path / "empty", "--scope", "side") == 4


class TestCompress:
    def test_recipe(self, run_dir):
        config, out = run_dir
        assert _run("compress", "--config", config, "--out", out, "--recipe") == 0
        rows = _rows(out / "compression.csv")
        assert rows[0] == ["wer_pct", "cer_pct", "total_params", "sparsity_pct", "flops", "sparse_size_bytes"]
        assert len(rows) == 4
        baseline, pruned, matched = (float(r[3]) for r in rows[1:])
        assert baseline == 0.0
        assert pruned > baseline
        assert rows[2][2] == rows[3][2]

        document = json.loads((out / "compression.json").read_text(encoding="utf-8"))
        assert [r["label"] for r in document["rows"]] == ["baseline", "pruned", "global"]
        assert document["split"] == "test_other"
        assert document["plan"]["provenance"] == "recipe"
        assert 0.0 < document["global_rho"] < 1.0
        manifest = run_service.load_manifest(out)
        assert manifest.artifacts["pruned.safetensors"].details["plan"] == document["plan"]
        assert {"pruned_mask.safetensors", "global_mask.safetensors"} <= set(manifest.artifacts)

        run_config = run_service.load_run_config(config)
        model, _ = model_service.load_checkpoint(out / "pruned.safetensors", run_config.model)
        _, _, other = task_service.generate(run_config.task)
        rates = model_service.evaluate(model, other)
        assert 100.0 * rates.wer == document["rows"][1]["wer_pct"]

        plan_mask = pruning_service.import_mask(out / "pruned_mask.safetensors")
        global_mask = pruning_service.import_mask(out / "global_mask.safetensors")
        assert plan_mask.pruned_count == global_mask.pruned_count
        for pid, keep in plan_mask.retained.items():
            assert not np.any(model.params[pid].data[~keep])

    def test_matched_global_row_in_report(self, run_dir):
        config, out = run_dir
        assert _run("compress", "--config", config, "--out", out, "--recipe") == 0
        assert _run("report", "--out", out) == 0
        text = (out / "REPORT.md").read_text(encoding="utf-8")
        assert "| global |" in text
        assert "`|` separator between tokens that counts as a reference symbol" in text

    def test_overlapping_plan(self, run_dir, tmp_path):
        config, out = run_dir
        plan = tmp_path / "plan.json"
        plan.write_text(json.dumps({
            "format_version": 1,
            "entries": [
                {"selector": {"side": "encoder", "kinds": ["ffn"]}, "rho": 0.5},
                {"selector": {"side": "encoder", "kinds": ["ffn"], "layers": [2, 2]}, "rho": 0.3},
            ],
        }), encoding="utf-8")
        assert _run("compress", "--config", config, "--out", out, "--plan", plan) == 5
        assert not (out / "pruned.safetensors").exists()

    def test_target_needs_component_sweep(self, run_dir):
        config, out = run_dir
        assert _run("compress", "--config", config, "--out", out, "--target", "0.2") == 5

    def test_target_writes_plan(self, run_dir):
        config, out = run_dir
        assert _run("sweep", "--config", config, "--out", out, "--scope", "components") == 0
        assert _run("compress", "--config", config, "--out", out, "--target", "0.1", "--epsilon", "50") == 0
        plan = json.loads((out / "plan.json").read_text(encoding="utf-8"))
        assert plan["provenance"] == "greedy"
        assert plan["target"] == 0.1


class TestReport:
    def test_idempotent(self, run_dir):
        config, out = run_dir
        assert _run("diagnose", "--config", config, "--out", out) == 0
        assert _run("sweep", "--config", config, "--out", out, "--scope", "layer_blocks") == 0
        assert _run("report", "--out", out) == 0
        first = ((out / "report.json").read_bytes(), (out / "REPORT.md").read_bytes())
        assert _run("report", "--out", out) == 0
        assert ((out / "report.json").read_bytes(), (out / "REPORT.md").read_bytes()) == first
        bundle = json.loads(first[0])
        assert set(bundle["sweeps"]) == {"layer_blocks"}
        assert len(bundle["sensitivity"]["entries"]) == 4

    def test_mixed_config_hashes(self, run_dir, tmp_path):
        _, out = run_dir
        other_config = write_config(tmp_path / "other.json", tiny_run_config(seed=1))
        other_out = tmp_path / "other_out"
        assert _run("train", "--config", other_config, "--out", other_out) == 0
        code = _run(
            "diagnose", "--config", other_config, "--out", out,
            "--checkpoint", other_out / "checkpoint.safetensors",
        )
        assert code == 0
        assert _run("report", "--out", out) == 6

    def test_modified_artifact(self, run_dir):
        _, out = run_dir
        with open(out / "loss_curve.csv", "a", encoding="utf-8") as f:
            f.write("99,0\n")
        assert _run("report", "--out", out) == 6


def _strip_timestamps(manifest: dict) -> dict:
    for record in manifest["artifacts"].values():
        record.pop("created_at")
    return manifest


def test_pipeline_artifacts_are_deterministic(tmp_path):
    config = write_config(tmp_path / "config.json", tiny_run_config())
    snapshots = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert _run("train", "--config", config, "--out", out) == 0
        assert _run("diagnose", "--config", config, "--out", out) == 0
        assert _run("sweep", "--config", config, "--out", out, "--scope", "side") == 0
        assert _run("sweep", "--config", config, "--out", out, "--scope", "components") == 0
        assert _run("compress", "--config", config, "--out", out, "--target", "0.1", "--epsilon", "50") == 0
        assert _run("report", "--out", out) == 0
        files = {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()}
        manifest = _strip_timestamps(json.loads(files.pop("manifest.json")))
        report = json.loads(files.pop("report.json"))
        report["manifest"] = _strip_timestamps(report["manifest"])
        snapshots.append((files, manifest, report))

    files, manifest, report = snapshots[0]
    assert {
        "checkpoint.safetensors", "pruned.safetensors", "pruned_mask.safetensors", "global_mask.safetensors",
        "plan.json", "compression.csv", "compression.json", "loss_curve.csv", "model_summary.json",
        "sensitivity.csv", "sensitivity.json", "sweep_side.csv", "sweep_side.json",
        "sweep_components.csv", "sweep_components.json", "REPORT.md",
    } <= set(files)
    assert set(manifest["artifacts"]) | {"REPORT.md"} <= set(files)
    assert snapshots[0] == snapshots[1]
