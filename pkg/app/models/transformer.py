"""Toy encoder-decoder transformer shaped like a small speech recogniser.

Layout (pre-LayerNorm, as in the reference architecture):

    frames -> conv(k, stride 1) -> GELU -> conv(k, stride 2) -> GELU -> + pos_emb
           -> N x [self-attn, FFN] -> LayerNorm                      = memory
    tokens -> token_emb + decoder positions
           -> M x [causal self-attn, cross-attn(memory), FFN] -> LayerNorm
           -> output projection (untied)                           = logits
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.autodiff import Tensor, ops
from app.config import SOT_TOKEN, EOT_TOKEN
from app.models import Side, ComponentKind
from app.models.registry import ComponentTag, ParameterRegistry, RegistryEntry
from app.schemas.config_schemas import ModelConfig
from app.services.exceptions import SequenceLengthError

MASK_VALUE = -1e9
INIT_STD = 0.02

# Kept at their initial values by training; still prunable.
FIXED_PARAMETERS = frozenset({"encoder.pos_emb"})


@dataclass(frozen=True)
class ParameterSpec:
    """Shape, tag and initialiser of one parameter tensor."""
    parameter_id: str
    tag: ComponentTag
    shape: Tuple[int, ...]
    init: str  # "normal" | "zeros" | "ones" | "sinusoid"


def sinusoids(length: int, channels: int) -> np.ndarray:
    """Sinusoidal position table [length, channels]."""
    half = channels // 2
    log_timescale = math.log(10000) / max(half - 1, 1)
    inv = np.exp(-log_timescale * np.arange(half))
    scaled = np.arange(length)[:, None] * inv[None, :]
    table = np.zeros((length, channels))
    table[:, :half] = np.sin(scaled)
    table[:, half:2 * half] = np.cos(scaled)
    return table


def parameter_layout(config: ModelConfig) -> List[ParameterSpec]:
    """Every trainable tensor of the model, in registry order."""
    d, f, k = config.d_model, config.d_ffn, config.conv_kernel
    specs: List[ParameterSpec] = []

    def add(pid: str, side: Side, kind: ComponentKind, shape: Tuple[int, ...], init: str, layer: Optional[int] = None):
        specs.append(ParameterSpec(pid, ComponentTag(side, kind, layer), shape, init))

    def attention(prefix: str, side: Side, kind: ComponentKind, layer: int):
        for name in ("q", "k", "v", "o"):
            add(f"{prefix}.{name}.weight", side, kind, (d, d), "normal", layer)
            add(f"{prefix}.{name}.bias", side, ComponentKind.BIAS, (d,), "zeros", layer)

    def ffn(prefix: str, side: Side, layer: int):
        add(f"{prefix}.fc1.weight", side, ComponentKind.FFN, (d, f), "normal", layer)
        add(f"{prefix}.fc1.bias", side, ComponentKind.BIAS, (f,), "zeros", layer)
        add(f"{prefix}.fc2.weight", side, ComponentKind.FFN, (f, d), "normal", layer)
        add(f"{prefix}.fc2.bias", side, ComponentKind.BIAS, (d,), "zeros", layer)

    def norm(prefix: str, side: Side, layer: Optional[int]):
        add(f"{prefix}.gamma", side, ComponentKind.LAYER_NORM, (d,), "ones", layer)
        add(f"{prefix}.beta", side, ComponentKind.LAYER_NORM, (d,), "zeros", layer)

    enc, dec = Side.ENCODER, Side.DECODER
    add("encoder.conv1.weight", enc, ComponentKind.CONV, (k, config.d_in, d), "normal")
    add("encoder.conv1.bias", enc, ComponentKind.BIAS, (d,), "zeros")
    add("encoder.conv2.weight", enc, ComponentKind.CONV, (k, d, d), "normal")
    add("encoder.conv2.bias", enc, ComponentKind.BIAS, (d,), "zeros")
    add("encoder.pos_emb", enc, ComponentKind.POS_EMB, (config.enc_positions, d), "sinusoid")
    for i in range(1, config.enc_layers + 1):
        prefix = f"encoder.layers.{i}"
        norm(f"{prefix}.ln1", enc, i)
        attention(f"{prefix}.self_attn", enc, ComponentKind.SELF_ATTN, i)
        norm(f"{prefix}.ln2", enc, i)
        ffn(f"{prefix}.ffn", enc, i)
    norm("encoder.ln_post", enc, None)

    add("decoder.token_emb", dec, ComponentKind.TOKEN_EMB, (config.vocab_size, d), "normal")
    # Learned decoder positions are part of the decoder embedding block.
    add("decoder.pos_emb", dec, ComponentKind.TOKEN_EMB, (config.max_tgt_len, d), "normal")
    for i in range(1, config.dec_layers + 1):
        prefix = f"decoder.layers.{i}"
        norm(f"{prefix}.ln1", dec, i)
        attention(f"{prefix}.self_attn", dec, ComponentKind.SELF_ATTN, i)
        norm(f"{prefix}.ln2", dec, i)
        attention(f"{prefix}.cross_attn", dec, ComponentKind.CROSS_ATTN, i)
        norm(f"{prefix}.ln3", dec, i)
        ffn(f"{prefix}.ffn", dec, i)
    norm("decoder.ln_final", dec, None)
    add("decoder.output_proj.weight", dec, ComponentKind.OUTPUT_PROJ, (d, config.vocab_size), "normal")
    return specs


def registry_from_layout(specs: Sequence[ParameterSpec]) -> ParameterRegistry:
    return ParameterRegistry(
        RegistryEntry(s.parameter_id, s.tag, int(np.prod(s.shape))) for s in specs
    )


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), MASK_VALUE), k=1)


class TransformerModel:
    """Parameters plus the forward computation; all math goes through ``app.autodiff.ops``."""

    def __init__(self, config: ModelConfig, params: Dict[str, Tensor], registry: ParameterRegistry):
        self.config = config
        self.params = params
        self.registry = registry

    def parameters(self) -> List[Tensor]:
        return [self.params[pid] for pid in self.registry.ids]

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return [(pid, self.params[pid]) for pid in self.registry.ids]

    def trainable_parameters(self) -> List[Tensor]:
        return [p for pid, p in self.named_parameters() if pid not in FIXED_PARAMETERS]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def clear_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- building blocks ----------------------------------------------------

    def _linear(self, x: Tensor, prefix: str) -> Tensor:
        return ops.add(ops.matmul(x, self.params[f"{prefix}.weight"]), self.params[f"{prefix}.bias"])

    def _norm(self, x: Tensor, prefix: str) -> Tensor:
        return ops.layer_norm(x, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"])

    def _split_heads(self, x: Tensor, keys: bool = False) -> Tensor:
        """[T, d] -> [h, T, dh], or [h, dh, T] for keys."""
        length = x.shape[0]
        heads = ops.reshape(x, (length, self.config.n_heads, self.config.head_dim))
        return ops.transpose(heads, (1, 2, 0) if keys else (1, 0, 2))

    def _attention(self, prefix: str, x: Tensor, source: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        q = self._split_heads(self._linear(x, f"{prefix}.q"))
        k = self._split_heads(self._linear(source, f"{prefix}.k"), keys=True)
        v = self._split_heads(self._linear(source, f"{prefix}.v"))
        scores = ops.scale(ops.matmul(q, k), 1.0 / math.sqrt(self.config.head_dim))
        if mask is not None:
            scores = ops.add(scores, Tensor(mask))
        context = ops.matmul(ops.softmax(scores, axis=-1), v)
        merged = ops.reshape(ops.transpose(context, (1, 0, 2)), (x.shape[0], self.config.d_model))
        return self._linear(merged, f"{prefix}.o")

    def _ffn(self, x: Tensor, prefix: str) -> Tensor:
        return self._linear(ops.gelu(self._linear(x, f"{prefix}.fc1")), f"{prefix}.fc2")

    # -- encoder / decoder --------------------------------------------------

    def encode(self, frames: np.ndarray) -> Tensor:
        """Encoder memory [ceil(T_src / 2), d_model] for frames [T_src, d_in]."""
        cfg = self.config
        if frames.shape[0] > cfg.max_src_len:
            raise SequenceLengthError("source", frames.shape[0], cfg.max_src_len)
        pad = cfg.conv_kernel // 2
        p = self.params
        h = ops.gelu(ops.add(ops.conv1d(Tensor(frames), p["encoder.conv1.weight"], 1, pad), p["encoder.conv1.bias"]))
        h = ops.gelu(ops.add(ops.conv1d(h, p["encoder.conv2.weight"], 2, pad), p["encoder.conv2.bias"]))
        h = ops.add(h, ops.embedding(p["encoder.pos_emb"], range(h.shape[0])))
        for i in range(1, cfg.enc_layers + 1):
            prefix = f"encoder.layers.{i}"
            normed = self._norm(h, f"{prefix}.ln1")
            h = ops.add(h, self._attention(f"{prefix}.self_attn", normed, normed))
            h = ops.add(h, self._ffn(self._norm(h, f"{prefix}.ln2"), f"{prefix}.ffn"))
        return self._norm(h, "encoder.ln_post")

    def decode(self, memory: Tensor, tokens: Sequence[int]) -> Tensor:
        """Logits [len(tokens), vocab] for decoder input ``tokens`` attending to ``memory``."""
        cfg = self.config
        length = len(tokens)
        if length > cfg.max_tgt_len:
            raise SequenceLengthError("target", length, cfg.max_tgt_len)
        p = self.params
        h = ops.add(ops.embedding(p["decoder.token_emb"], tokens), ops.embedding(p["decoder.pos_emb"], range(length)))
        mask = causal_mask(length)
        for i in range(1, cfg.dec_layers + 1):
            prefix = f"decoder.layers.{i}"
            normed = self._norm(h, f"{prefix}.ln1")
            h = ops.add(h, self._attention(f"{prefix}.self_attn", normed, normed, mask))
            h = ops.add(h, self._attention(f"{prefix}.cross_attn", self._norm(h, f"{prefix}.ln2"), memory))
            h = ops.add(h, self._ffn(self._norm(h, f"{prefix}.ln3"), f"{prefix}.ffn"))
        h = self._norm(h, "decoder.ln_final")
        return ops.matmul(h, p["decoder.output_proj.weight"])

    def forward(self, frames: np.ndarray, tgt_tokens: Sequence[int]) -> Tensor:
        return self.decode(self.encode(frames), tgt_tokens)

    def loss(self, frames: np.ndarray, target: Sequence[int]) -> Tensor:
        """Teacher-forced NLL: input SOT + target, labels target + EOT."""
        inputs = [SOT_TOKEN, *target]
        labels = [*target, EOT_TOKEN]
        return ops.cross_entropy(self.forward(frames, inputs), labels)

    def greedy_decode(self, frames: np.ndarray, max_len: int) -> List[int]:
        """Argmax decoding from SOT until EOT or ``max_len`` tokens."""
        if max_len > self.config.max_tgt_len:
            raise SequenceLengthError("decode", max_len, self.config.max_tgt_len)
        memory = self.encode(frames)
        tokens = [SOT_TOKEN]
        for _ in range(max_len):
            logits = self.decode(memory, tokens)
            token = int(np.argmax(logits.data[-1]))
            if token == EOT_TOKEN:
                break
            tokens.append(token)
        return tokens[1:]



def initial_value(spec: ParameterSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.init == "normal":
        return rng.normal(0.0, INIT_STD, size=spec.shape)
    if spec.init == "zeros":
        return np.zeros(spec.shape)
    if spec.init == "ones":
        return np.ones(spec.shape)
    return sinusoids(*spec.shape)
