"""Service layer for run configuration, output directories and the artifact manifest."""

import hashlib
import json
import logging
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from pydantic import ValidationError

from app import __version__
from app.config import FORMAT_VERSION, settings
from app.models import Dataset, Split
from app.schemas.config_schemas import RunConfig
from app.schemas.report_schemas import ArtifactRecord, Manifest
from app.services import task_service
from app.services.exceptions import ConfigError, ConsistencyError
from app.storage.files import atomic_write_text

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

# Fields that never change results and so stay out of the config hash.
UNHASHED_FIELDS = {"output_dir", "jobs"}


def load_run_config(path: Path) -> RunConfig:
    """Read and validate a JSON run configuration.

    Raises:
        ConfigError: missing or unreadable file, bad JSON or a violated constraint.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc.strerror or exc}", "readable")
    try:
        return RunConfig.model_validate_json(text)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first.get("loc", ())) or "config"
        raise ConfigError(f"Invalid config {path}: {location}: {first.get('msg')}", location)


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical JSON of everything that affects results."""
    payload = config.model_dump(mode="json", exclude=UNHASHED_FIELDS)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def resolve_output_dir(config: RunConfig, override: Optional[Path] = None) -> Path:
    """``--out`` wins, then the config's output_dir, then PRUNE_LAB_OUTPUT_DIR / the default."""
    if override is not None:
        out = Path(override)
    elif config.output_dir is not None:
        out = Path(config.output_dir)
    else:
        out = settings.OUTPUT_DIR
    out.mkdir(parents=True, exist_ok=True)
    return out


def prepare_splits(config: RunConfig) -> Dict[Split, Dataset]:
    train, clean, other = task_service.generate(config.task)
    return {Split.TRAIN: train, Split.TEST_CLEAN: clean, Split.TEST_OTHER: other}


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def versions() -> Dict[str, str]:
    return {
        "prune_lab": __version__,
        "format": str(FORMAT_VERSION),
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


def load_manifest(out_dir: Path) -> Manifest:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        return Manifest(format_version=FORMAT_VERSION, versions=versions())
    return Manifest.model_validate_json(path.read_text(encoding="utf-8"))


def register_artifacts(
    out_dir: Path,
    names: Dict[str, Dict[str, Any]],
    hash_value: str,
    command: str,
) -> Manifest:
    """Record (or replace) manifest entries for files just written to ``out_dir``.

    Args:
        names: artifact file name -> details to store with it.
    """
    manifest = load_manifest(out_dir)
    now = datetime.now(timezone.utc)
    for name, details in names.items():
        manifest.artifacts[name] = ArtifactRecord(
            config_hash=hash_value,
            sha256=file_sha256(Path(out_dir) / name),
            created_at=now,
            command=command,
            details=details,
        )
    manifest.versions = versions()
    atomic_write_text(Path(out_dir) / MANIFEST_NAME, manifest.model_dump_json(indent=2) + "\n")
    logger.debug(f"Manifest updated with {', '.join(names)}")
    return manifest


def check_consistency(out_dir: Path, manifest: Manifest) -> str:
    """Verify every registered artifact is intact and shares one config hash.

    Returns:
        The common config hash.

    Raises:
        ConsistencyError: differing hashes, or a file whose bytes no longer match its record.
    """
    hashes = sorted({record.config_hash for record in manifest.artifacts.values()})
    if len(hashes) != 1:
        raise ConsistencyError(hashes)
    for name, record in manifest.artifacts.items():
        path = Path(out_dir) / name
        if not path.exists() or file_sha256(path) != record.sha256:
            raise ConsistencyError([record.config_hash, f"{name} (modified or missing)"])
    return hashes[0]
