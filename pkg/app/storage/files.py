"""Checkpoint, dataset and mask files.

Every container is a safetensors file whose single metadata key ``prune_lab``
holds a JSON document; all writes are atomic (temp file + ``os.replace``).
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np
from safetensors import safe_open
from safetensors.numpy import save

from app.config import FORMAT_VERSION
from app.models import Dataset, Split, Utterance
from app.schemas.config_schemas import ModelConfig
from app.services.exceptions import CheckpointMismatchError

logger = logging.getLogger(__name__)

METADATA_KEY = "prune_lab"


def atomic_write(path: Path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` through a temp file in the same directory."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as f:
        f.write(payload)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def _write_container(path: Path, tensors: Dict[str, np.ndarray], meta: Dict[str, Any]) -> None:
    document = json.dumps(meta, sort_keys=True, separators=(",", ":"))
    atomic_write(path, save(tensors, metadata={METADATA_KEY: document}))


def _read_container(path: Path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    if not path.exists():
        raise FileNotFoundError(f"No such file: {path}")
    try:
        with safe_open(str(path), framework="np") as f:
            raw = (f.metadata() or {}).get(METADATA_KEY)
            tensors = {key: f.get_tensor(key) for key in f.keys()}
    except Exception as exc:
        raise CheckpointMismatchError(f"Cannot read {path}: {exc}")
    if raw is None:
        raise CheckpointMismatchError(f"{path} is not a prune-lab file")
    meta = json.loads(raw)
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointMismatchError(
            f"{path} has format version {meta.get('format_version')}, expected {FORMAT_VERSION}"
        )
    return tensors, meta


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path: Path, config: ModelConfig, arrays: Dict[str, np.ndarray], config_hash: str) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "model": config.model_dump(mode="json"),
        "config_hash": config_hash,
    }
    _write_container(path, {pid: np.ascontiguousarray(a, dtype=np.float64) for pid, a in arrays.items()}, meta)


def load_checkpoint(path: Path) -> Tuple[ModelConfig, Dict[str, np.ndarray], str]:
    """Returns (model config, arrays by parameter id, config hash)."""
    tensors, meta = _read_container(path)
    return ModelConfig.model_validate(meta["model"]), tensors, meta.get("config_hash", "")


# -- datasets ------------------------------------------------------------------

def save_dataset(path: Path, dataset: Dataset, task_json: str) -> None:
    tensors: Dict[str, np.ndarray] = {}
    for i, item in enumerate(dataset.items):
        tensors[f"item{i:05d}.frames"] = np.ascontiguousarray(item.frames, dtype=np.float64)
        tensors[f"item{i:05d}.target"] = np.asarray(item.target, dtype=np.int64)
    meta = {
        "format_version": FORMAT_VERSION,
        "split": dataset.split.value,
        "count": len(dataset),
        "task": json.loads(task_json),
    }
    _write_container(path, tensors, meta)


def load_dataset(path: Path) -> Tuple[Dataset, str]:
    """Returns (dataset, TaskSpec JSON)."""
    tensors, meta = _read_container(path)
    items = []
    for i in range(meta["count"]):
        frames = tensors[f"item{i:05d}.frames"]
        frames.setflags(write=False)
        target = tuple(int(t) for t in tensors[f"item{i:05d}.target"])
        items.append(Utterance(frames, target))
    return Dataset(Split(meta["split"]), tuple(items)), json.dumps(meta["task"])


# -- masks ---------------------------------------------------------------------

def save_mask(path: Path, retained: Dict[str, np.ndarray], info: Dict[str, Any]) -> None:
    """One packed bitset (1 = retained) per parameter plus shapes and ``info``."""
    meta = dict(info)
    meta["format_version"] = FORMAT_VERSION
    meta["shapes"] = {pid: list(bits.shape) for pid, bits in retained.items()}
    packed = {pid: np.packbits(bits.reshape(-1).astype(np.uint8)) for pid, bits in retained.items()}
    _write_container(path, packed, meta)


def load_mask(path: Path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    tensors, meta = _read_container(path)
    retained = {}
    for pid, shape in meta["shapes"].items():
        size = int(np.prod(shape))
        retained[pid] = np.unpackbits(tensors[pid], count=size).astype(bool).reshape(shape)
    return retained, meta
