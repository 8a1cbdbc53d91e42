"""Shared fixtures: tiny model/task configs and ready-built models."""

import json
from pathlib import Path

import numpy as np
import pytest

from app.schemas.config_schemas import ModelConfig, RunConfig, TaskSpec, TrainConfig
from app.services import model_service, task_service


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long seeded experiments (deselect with -m 'not slow')")


TINY_MODEL = ModelConfig(
    enc_layers=3,
    dec_layers=3,
    d_model=16,
    n_heads=2,
    d_ffn=32,
    vocab_size=12,
    d_in=8,
    max_src_len=16,
    max_tgt_len=8,
    conv_kernel=3,
    seed=3,
)

TINY_TASK = TaskSpec(
    seed=7,
    n_train=32,
    n_test=8,
    t_range=(2, 5),
    vocab_size=12,
    d_in=8,
    sigma_clean=0.1,
    sigma_other=0.6,
    frames_per_token=2,
)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return TINY_MODEL


@pytest.fixture
def tiny_task() -> TaskSpec:
    return TINY_TASK


@pytest.fixture(scope="session")
def tiny_splits():
    train, clean, other = task_service.generate(TINY_TASK)
    return {"train": train, "test_clean": clean, "test_other": other}


@pytest.fixture
def tiny_model():
    """Freshly initialised tiny model and its registry."""
    return model_service.build(TINY_MODEL)


@pytest.fixture
def dense_model():
    """Tiny model whose every parameter is a nonzero Gaussian draw (no exact zeros)."""
    model, registry = model_service.build(TINY_MODEL)
    rng = np.random.default_rng(11)
    for _, p in model.named_parameters():
        p.data[...] = rng.normal(0.0, 0.1, size=p.shape)
    return model, registry


@pytest.fixture(scope="session")
def trained_snapshot(tiny_splits):
    """Weights of the tiny model after a short training run."""
    model, _ = model_service.build(TINY_MODEL)
    model_service.train(model, tiny_splits["train"], steps=40, lr=0.2, batch=8, seed=0)
    return model_service.snapshot(model)


@pytest.fixture
def trained_model(trained_snapshot):
    model, registry = model_service.build(TINY_MODEL)
    model_service.restore(model, trained_snapshot)
    return model, registry


def tiny_run_config(**overrides) -> RunConfig:
    base = dict(
        seed=0,
        model=TINY_MODEL,
        task=TaskSpec(
            seed=7,
            n_train=16,
            n_test=4,
            t_range=(2, 4),
            vocab_size=12,
            d_in=8,
            sigma_clean=0.1,
            sigma_other=0.6,
            frames_per_token=2,
        ),
        train=TrainConfig(steps=5, lr=0.2, batch=4),
        sweep_grid=[0.5],
        diagnostic_n=2,
    )
    base.update(overrides)
    return RunConfig(**base)


def write_config(path: Path, config: RunConfig) -> Path:
    path.write_text(json.dumps(config.model_dump(mode="json"), indent=2), encoding="utf-8")
    return path
