"""Deterministic generator of the synthetic speech-proxy task."""

import logging
from pathlib import Path
from typing import Tuple

import numpy as np

from app.config import FIRST_CONTENT_TOKEN
from app.models import Dataset, Split, Utterance
from app.schemas.config_schemas import TaskSpec
from app.storage import files

logger = logging.getLogger(__name__)


def _streams(spec: TaskSpec):
    """Independent generators: prototypes, train, test tokens, clean noise, other noise."""
    return [np.random.default_rng(child) for child in np.random.SeedSequence(spec.seed).spawn(5)]


def make_prototypes(spec: TaskSpec) -> np.ndarray:
    """One standard-Gaussian frame prototype per vocabulary id, [vocab_size, d_in]."""
    return _streams(spec)[0].standard_normal((spec.vocab_size, spec.d_in))


def _draw_target(spec: TaskSpec, rng: np.random.Generator) -> Tuple[int, ...]:
    low, high = spec.t_range
    length = int(rng.integers(low, high + 1))
    return tuple(int(t) for t in rng.integers(FIRST_CONTENT_TOKEN, spec.vocab_size, size=length))


def _frames(spec: TaskSpec, prototypes: np.ndarray, target: Tuple[int, ...], sigma: float, rng: np.random.Generator) -> np.ndarray:
    clean = np.repeat(prototypes[list(target)], spec.frames_per_token, axis=0)
    frames = clean + sigma * rng.standard_normal(clean.shape)
    frames.setflags(write=False)
    return frames


def generate(spec: TaskSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Build (train, test_clean, test_other).

    Targets are uniform token sequences; frames repeat each token's prototype
    ``frames_per_token`` times and add Gaussian noise. Both test splits share
    token sequences and prototypes and differ only in noise.
    """
    proto_rng, train_rng, token_rng, clean_rng, other_rng = _streams(spec)
    prototypes = proto_rng.standard_normal((spec.vocab_size, spec.d_in))

    train_items = []
    for _ in range(spec.n_train):
        target = _draw_target(spec, train_rng)
        train_items.append(Utterance(_frames(spec, prototypes, target, spec.sigma_clean, train_rng), target))

    test_targets = [_draw_target(spec, token_rng) for _ in range(spec.n_test)]
    clean_items = tuple(
        Utterance(_frames(spec, prototypes, t, spec.sigma_clean, clean_rng), t) for t in test_targets
    )
    other_items = tuple(
        Utterance(_frames(spec, prototypes, t, spec.sigma_other, other_rng), t) for t in test_targets
    )
    logger.debug(f"Generated task: {spec.n_train} train / {spec.n_test} test utterances")
    return (
        Dataset(Split.TRAIN, tuple(train_items)),
        Dataset(Split.TEST_CLEAN, clean_items),
        Dataset(Split.TEST_OTHER, other_items),
    )


def export_dataset(dataset: Dataset, spec: TaskSpec, path: Path) -> None:
    files.save_dataset(path, dataset, spec.model_dump_json())
    logger.info(f"Dataset '{dataset.split.value}' ({len(dataset)} items) written to {path}")


def import_dataset(path: Path) -> Tuple[Dataset, TaskSpec]:
    dataset, spec_json = files.load_dataset(path)
    return dataset, TaskSpec.model_validate_json(spec_json)
