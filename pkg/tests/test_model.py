import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.config import EOT_TOKEN, SOT_TOKEN
from app.models import ComponentKind, Side
from app.models.registry import ComponentTag, Selector, parameter_shares
from app.models.transformer import parameter_layout, registry_from_layout, sinusoids
from app.schemas.config_schemas import ModelConfig
from app.services import model_service, pruning_service
from app.services.exceptions import (
    ArgumentError,
    CheckpointMismatchError,
    ConfigError,
    SequenceLengthError,
    SnapshotError,
    TrainingError,
)
from conftest import TINY_MODEL


def _closed_form_counts(c: ModelConfig):
    d, f, k = c.d_model, c.d_ffn, c.conv_kernel
    attention = 4 * (d * d + d)
    ffn = d * f + f + f * d + d
    norm = 2 * d
    encoder = (
        k * c.d_in * d + d
        + k * d * d + d
        + ((c.max_src_len + 1) // 2) * d
        + c.enc_layers * (2 * norm + attention + ffn)
        + norm
    )
    decoder = (
        c.vocab_size * d
        + c.max_tgt_len * d
        + c.dec_layers * (3 * norm + 2 * attention + ffn)
        + norm
        + d * c.vocab_size
    )
    return encoder, decoder


class TestRegistry:
    def test_default_parameter_count_matches_closed_form(self):
        config = ModelConfig()
        registry = registry_from_layout(parameter_layout(config))
        encoder, decoder = _closed_form_counts(config)
        counts = registry.side_counts()
        assert (encoder, decoder) == (316_544, 409_856)
        assert counts[Side.ENCODER] == encoder
        assert counts[Side.DECODER] == decoder
        assert registry.total_count == 726_400

    def test_all_nine_kinds_present(self, tiny_model):
        _, registry = tiny_model
        assert registry.kinds_present() == list(ComponentKind)

    def test_sides_partition_the_model(self, tiny_model):
        _, registry = tiny_model
        sides = [Selector(side=s) for s in (Side.ENCODER, Side.DECODER)]
        assert sum(registry.selected_count(s) for s in sides) == registry.total_count

    def test_decoder_share_exceeds_encoder_share(self):
        shares = parameter_shares(registry_from_layout(parameter_layout(ModelConfig())))
        assert shares["decoder"] > shares["encoder"]
        assert shares["encoder"] + shares["decoder"] == pytest.approx(1.0)

    def test_selector_resolution_is_order_stable(self, tiny_model):
        _, registry = tiny_model
        selector = Selector.of(Side.DECODER, ComponentKind.FFN, ComponentKind.SELF_ATTN, layers=(2, 3))
        first = registry.resolve(selector)
        assert first == registry.resolve(Selector.of(Side.DECODER, ComponentKind.SELF_ATTN, ComponentKind.FFN, layers=(2, 3)))
        assert first == [pid for pid in registry.ids if pid in set(first)]
        assert all(".bias" not in pid for pid in first)

    def test_wiring_is_validated(self):
        with pytest.raises(ConfigError):
            ComponentTag(Side.ENCODER, ComponentKind.CROSS_ATTN, 1)
        with pytest.raises(ConfigError):
            ComponentTag(Side.DECODER, ComponentKind.CONV)
        with pytest.raises(ConfigError):
            ComponentTag(Side.ENCODER, ComponentKind.OUTPUT_PROJ)

    def test_invalid_model_config(self):
        with pytest.raises(ValidationError):
            ModelConfig(d_model=30, n_heads=4)
        with pytest.raises(ValidationError):
            ModelConfig(enc_layers=2)


class TestForward:
    def test_build_is_deterministic(self, tiny_config):
        first, _ = model_service.build(tiny_config)
        second, _ = model_service.build(tiny_config)
        assert model_service.parameter_bytes(first) == model_service.parameter_bytes(second)

    def test_logits_shape(self, tiny_model, tiny_splits):
        model, _ = tiny_model
        item = tiny_splits["train"].items[0]
        logits = model_service.forward(model, item.frames, [SOT_TOKEN, 4, 5])
        assert logits.shape == (3, model.config.vocab_size)

    def test_decoder_is_causal(self, dense_model, tiny_splits):
        model, _ = dense_model
        frames = tiny_splits["train"].items[1].frames
        rng = np.random.default_rng(0)
        for t in range(1, 6):
            prefix = [SOT_TOKEN, *rng.integers(2, 12, size=t - 1)]
            a = model.forward(frames, prefix + [3, 4])
            b = model.forward(frames, prefix + [9, 10])
            assert np.array_equal(a.data[:t], b.data[:t])

    def test_zeroed_cross_attention_ignores_frames(self, dense_model, tiny_splits):
        model, _ = dense_model
        for pid, p in model.named_parameters():
            if ".cross_attn.o." in pid:
                p.data[...] = 0.0
        tokens = [SOT_TOKEN, 5, 6]
        a = model.forward(tiny_splits["train"].items[0].frames[:6], tokens)
        b = model.forward(tiny_splits["train"].items[3].frames[:8], tokens)
        assert np.array_equal(a.data, b.data)

    def test_source_too_long(self, tiny_model):
        model, _ = tiny_model
        with pytest.raises(SequenceLengthError):
            model.encode(np.zeros((model.config.max_src_len + 1, model.config.d_in)))

    def test_greedy_decode_stops_at_eot(self, tiny_model, tiny_splits):
        model, _ = tiny_model
        p = model.params
        p["decoder.ln_final.gamma"].data[...] = 0.0
        p["decoder.ln_final.beta"].data[...] = 1.0
        p["decoder.output_proj.weight"].data[...] = 0.0
        p["decoder.output_proj.weight"].data[:, EOT_TOKEN] = 1.0
        assert model_service.greedy_decode(model, tiny_splits["train"].items[0].frames) == []

    def test_greedy_decode_contract(self, dense_model, tiny_splits):
        model, _ = dense_model
        frames = tiny_splits["train"].items[2].frames
        first = model_service.greedy_decode(model, frames)
        assert first == model_service.greedy_decode(model, frames)
        assert EOT_TOKEN not in first
        assert len(first) <= model.config.max_tgt_len
        with pytest.raises(SequenceLengthError):
            model_service.greedy_decode(model, frames, max_len=model.config.max_tgt_len + 1)


@pytest.fixture(scope="module")
def overfit_model(tiny_splits):
    """Tiny model after 200 full-batch steps on 16 training utterances."""
    model, _ = model_service.build(TINY_MODEL)
    subset = tiny_splits["train"].head(16)
    curve = model_service.train(model, subset, steps=200, lr=0.5, batch=16, seed=0)
    return model, subset, curve


class TestTraining:
    def test_loss_curve_length_and_determinism(self, tiny_config, tiny_splits):
        a, _ = model_service.build(tiny_config)
        b, _ = model_service.build(tiny_config)
        curve_a = model_service.train(a, tiny_splits["train"], steps=3, lr=0.1, batch=4, seed=5)
        curve_b = model_service.train(b, tiny_splits["train"], steps=3, lr=0.1, batch=4, seed=5)
        assert len(curve_a) == 3
        assert curve_a == curve_b
        assert model_service.parameter_bytes(a) == model_service.parameter_bytes(b)

    def test_zero_lr_keeps_parameters(self, tiny_model, tiny_splits):
        model, _ = tiny_model
        before = model_service.parameter_bytes(model)
        model_service.train(model, tiny_splits["train"], steps=2, lr=0.0, batch=4)
        assert model_service.parameter_bytes(model) == before

    def test_divergence_raises(self, tiny_model, tiny_splits):
        model, _ = tiny_model
        model.params["decoder.output_proj.weight"].data[0, 0] = np.nan
        with pytest.raises(TrainingError) as info:
            model_service.train(model, tiny_splits["train"], steps=2, lr=0.1, batch=2)
        assert info.value.step == 1

    def test_empty_dataset(self, tiny_model, tiny_splits):
        model, _ = tiny_model
        with pytest.raises(ArgumentError):
            model_service.train(model, tiny_splits["train"].head(0), steps=1, lr=0.1, batch=2)

    @pytest.mark.slow
    def test_overfits_a_small_set(self, overfit_model):
        _, subset, curve = overfit_model
        assert len(subset) == 16
        assert curve[-1] < 0.1
        assert curve[-1] < curve[0]

    @pytest.mark.slow
    def test_overfit_model_decodes_a_memorized_target(self, overfit_model):
        model, subset, _ = overfit_model
        # a summed NLL below ln 2 puts every reference token above probability 1/2
        memorized = [
            item for item in subset.items
            if model.loss(item.frames, item.target).item() * (len(item.target) + 1) < math.log(2)
        ]
        assert memorized
        for item in memorized:
            assert model_service.greedy_decode(model, item.frames) == list(item.target)

    def test_sinusoidal_table_is_fixed(self, tiny_model, tiny_splits):
        model, registry = tiny_model
        table = model.params["encoder.pos_emb"].data
        assert np.array_equal(table, sinusoids(*table.shape))
        before = table.copy()
        model_service.train(model, tiny_splits["train"], steps=2, lr=0.5, batch=4)
        assert np.array_equal(model.params["encoder.pos_emb"].data, before)
        mask = pruning_service.prune(model, registry, Selector.of(Side.ENCODER, ComponentKind.POS_EMB), 0.5)
        assert mask.retained.keys() == {"encoder.pos_emb"}
        assert mask.pruned_count == table.size // 2


class TestSnapshots:
    def test_restore_round_trip(self, dense_model, tiny_splits):
        model, registry = dense_model
        item = tiny_splits["test_clean"].items[0]
        before = model.forward(item.frames, [SOT_TOKEN, *item.target]).data
        snap = model_service.snapshot(model)
        assert snap.size == registry.total_count
        for _, p in model.named_parameters():
            p.data += 1.0
        model_service.restore(model, snap)
        model_service.restore(model, snap)
        assert np.array_equal(model.forward(item.frames, [SOT_TOKEN, *item.target]).data, before)

    def test_restore_rejects_other_config(self, tiny_model, tiny_config):
        model, _ = tiny_model
        other, _ = model_service.build(tiny_config.model_copy(update={"seed": 99}))
        with pytest.raises(SnapshotError):
            model_service.restore(model, model_service.snapshot(other))

    def test_clone_is_independent(self, tiny_model):
        model, _ = tiny_model
        copy = model_service.clone(model)
        copy.params["encoder.conv1.weight"].data[...] = 0.0
        assert np.count_nonzero(model.params["encoder.conv1.weight"].data) > 0

    def test_checkpoint_round_trip(self, tmp_path, dense_model, tiny_config):
        model, _ = dense_model
        path = tmp_path / "ckpt.safetensors"
        model_service.save_checkpoint(model, path, "abc")
        loaded, _ = model_service.load_checkpoint(path, tiny_config)
        assert model_service.parameter_bytes(loaded) == model_service.parameter_bytes(model)
        model_service.save_checkpoint(loaded, tmp_path / "again.safetensors", "abc")
        assert path.read_bytes() == (tmp_path / "again.safetensors").read_bytes()

    def test_checkpoint_config_mismatch(self, tmp_path, tiny_model, tiny_config):
        model, _ = tiny_model
        path = tmp_path / "ckpt.safetensors"
        model_service.save_checkpoint(model, path, "abc")
        with pytest.raises(CheckpointMismatchError):
            model_service.load_checkpoint(path, tiny_config.model_copy(update={"d_ffn": 64}))
