import numpy as np
import pytest
from pydantic import ValidationError

from app.models import Split
from app.schemas.config_schemas import ModelConfig, RunConfig, TaskSpec
from app.services import task_service


def test_same_seed_gives_identical_datasets(tiny_task):
    first = task_service.generate(tiny_task)
    second = task_service.generate(tiny_task)
    for a, b in zip(first, second):
        assert a.references == b.references
        assert all(x.frames.tobytes() == y.frames.tobytes() for x, y in zip(a.items, b.items))


def test_split_invariants(tiny_task):
    train, clean, other = task_service.generate(tiny_task)
    assert (train.split, clean.split, other.split) == (Split.TRAIN, Split.TEST_CLEAN, Split.TEST_OTHER)
    assert len(train) == tiny_task.n_train
    assert len(clean) == len(other) == tiny_task.n_test
    assert clean.references == other.references
    low, high = tiny_task.t_range
    for item in train.items + clean.items:
        assert low <= len(item.target) <= high
        assert all(2 <= t < tiny_task.vocab_size for t in item.target)
        assert item.frames.shape == (tiny_task.frames_per_token * len(item.target), tiny_task.d_in)


def test_frames_are_read_only(tiny_task):
    train, _, _ = task_service.generate(tiny_task)
    with pytest.raises(ValueError):
        train.items[0].frames[0, 0] = 1.0


def test_zero_noise_reproduces_prototypes(tiny_task):
    spec = tiny_task.model_copy(update={"sigma_clean": 0.0})
    prototypes = task_service.make_prototypes(spec)
    _, clean, _ = task_service.generate(spec)
    for item in clean.items:
        expected = np.repeat(prototypes[list(item.target)], spec.frames_per_token, axis=0)
        assert np.array_equal(item.frames, expected)


def test_noise_level_matches_sigma():
    spec = TaskSpec(seed=3, n_train=1, n_test=200)
    prototypes = task_service.make_prototypes(spec)
    _, _, other = task_service.generate(spec)
    residual = np.concatenate([
        item.frames - np.repeat(prototypes[list(item.target)], spec.frames_per_token, axis=0)
        for item in other.items
    ])
    std = residual.std(axis=0)
    assert np.all(np.abs(std - spec.sigma_other) <= 0.05 * spec.sigma_other)


def test_dataset_export_import(tmp_path, tiny_task):
    _, clean, _ = task_service.generate(tiny_task)
    path = tmp_path / "clean.safetensors"
    task_service.export_dataset(clean, tiny_task, path)
    loaded, spec = task_service.import_dataset(path)
    assert spec == tiny_task
    assert loaded.split == Split.TEST_CLEAN
    assert loaded.references == clean.references
    assert all(np.array_equal(a.frames, b.frames) for a, b in zip(loaded.items, clean.items))


class TestValidation:
    def test_sigma_order(self):
        with pytest.raises(ValidationError):
            TaskSpec(sigma_clean=0.5, sigma_other=0.5)

    def test_bad_length_range(self):
        with pytest.raises(ValidationError):
            TaskSpec(t_range=(5, 3))

    def test_vocab_must_match_model(self):
        with pytest.raises(ValidationError):
            RunConfig(task=TaskSpec(vocab_size=32))

    def test_longest_utterance_must_fit(self):
        with pytest.raises(ValidationError):
            RunConfig(model=ModelConfig(max_src_len=16))
