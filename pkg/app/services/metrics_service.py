"""Error metrics (WER/CER/delta-WER) and model-cost accounting."""

import math
from typing import Dict, Hashable, List, Sequence, Tuple

import numpy as np

from app.config import INDEX_BYTES, VALUE_BYTES
from app.models import WEIGHT_KINDS, ComponentKind, ParameterRegistry, Side
from app.models.registry import Selector
from app.models.transformer import TransformerModel
from app.schemas.config_schemas import ModelConfig
from app.schemas.report_schemas import CostReport, ErrorRates
from app.services.exceptions import MetricError

TOKEN_SEPARATOR = "|"


def edit_distance(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> Tuple[int, int, int, int]:
    """Levenshtein distance with unit costs and its S/D/I split.

    The backtrace prefers the diagonal step (match or substitution), then a
    deletion, then an insertion, so the decomposition is deterministic.

    Returns:
        (distance, substitutions, deletions, insertions)
    """
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.int64)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            d[i, j] = min(d[i - 1, j - 1] + cost, d[i - 1, j] + 1, d[i, j - 1] + 1)

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            if d[i, j] == d[i - 1, j - 1] + cost:
                subs += cost
                i, j = i - 1, j - 1
                continue
        if i > 0 and d[i, j] == d[i - 1, j] + 1:
            dels += 1
            i -= 1
            continue
        ins += 1
        j -= 1
    return int(d[n, m]), subs, dels, ins


def token_symbols(tokens: Sequence[int]) -> List[str]:
    """Character view of a transcript: base-10 digits of each id, '|' between ids."""
    symbols: List[str] = []
    for position, token in enumerate(tokens):
        if position:
            symbols.append(TOKEN_SEPARATOR)
        symbols.extend(str(int(token)))
    return symbols


def _check_corpus(refs: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]]) -> None:
    if len(refs) != len(hyps):
        raise MetricError(f"{len(refs)} references but {len(hyps)} hypotheses")
    if sum(len(r) for r in refs) == 0:
        raise MetricError("Reference corpus is empty")


def cer(refs: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]]) -> float:
    """Corpus-level character error rate over the digit expansion of each token."""
    _check_corpus(refs, hyps)
    errors = length = 0
    for ref, hyp in zip(refs, hyps):
        ref_symbols = token_symbols(ref)
        errors += edit_distance(ref_symbols, token_symbols(hyp))[0]
        length += len(ref_symbols)
    return errors / length


def wer(refs: Sequence[Sequence[int]], hyps: Sequence[Sequence[int]]) -> ErrorRates:
    """Pooled error rates: total edits over total reference tokens.

    Raises:
        MetricError: unequal list lengths or an empty reference corpus.
    """
    _check_corpus(refs, hyps)
    subs = dels = ins = ref_len = 0
    for ref, hyp in zip(refs, hyps):
        _, s, d, i = edit_distance(ref, hyp)
        subs, dels, ins = subs + s, dels + d, ins + i
        ref_len += len(ref)
    return ErrorRates(
        wer=(subs + dels + ins) / ref_len,
        cer=cer(refs, hyps),
        substitutions=subs,
        deletions=dels,
        insertions=ins,
        ref_len=ref_len,
    )


def delta_wer(baseline: ErrorRates, pruned: ErrorRates) -> float:
    """Pruned minus baseline WER in absolute percentage points (negative = better)."""
    return 100.0 * (pruned.wer - baseline.wer)


# -- cost accounting ---------------------------------------------------------

def reference_lengths(config: ModelConfig) -> Tuple[int, int, int]:
    """(source frames, encoder positions, decoder positions) of the reference utterance."""
    t_src = config.max_src_len
    return t_src, math.ceil(t_src / 2), config.max_tgt_len


def weight_flops(config: ModelConfig, registry: ParameterRegistry) -> Dict[str, float]:
    """Dense FLOPs (multiply-add = 2) each parameter tensor costs on the reference utterance.

    Biases, layer norms and embedding lookups cost nothing here.
    """
    t_src, t_enc, t_tgt = reference_lengths(config)
    flops: Dict[str, float] = {}
    for entry in registry.entries:
        pid, tag = entry.parameter_id, entry.tag
        if not pid.endswith("weight"):
            flops[pid] = 0.0
        elif pid == "encoder.conv1.weight":
            flops[pid] = 2.0 * entry.count * t_src
        elif tag.kind == ComponentKind.CONV:
            flops[pid] = 2.0 * entry.count * t_enc
        elif tag.kind == ComponentKind.CROSS_ATTN and (".k." in pid or ".v." in pid):
            # Keys and values of cross-attention project the encoder memory.
            flops[pid] = 2.0 * entry.count * t_enc
        elif tag.side == Side.ENCODER:
            flops[pid] = 2.0 * entry.count * t_enc
        else:
            flops[pid] = 2.0 * entry.count * t_tgt
    return flops


def attention_core_flops(config: ModelConfig) -> float:
    """Score and context products of every attention block (not prunable)."""
    _, t_enc, t_tgt = reference_lengths(config)
    d = config.d_model
    encoder = config.enc_layers * 4.0 * t_enc * t_enc * d
    decoder = config.dec_layers * (4.0 * t_tgt * t_tgt * d + 4.0 * t_tgt * t_enc * d)
    return encoder + decoder


def nonzero_count(model: TransformerModel, parameter_ids: Sequence[str] = ()) -> int:
    ids = parameter_ids or model.registry.ids
    return sum(int(np.count_nonzero(model.params[pid].data)) for pid in ids)


def cost_report(model: TransformerModel, registry: ParameterRegistry, config: ModelConfig) -> CostReport:
    """Parameter, FLOP and sparse-storage accounting of the model's current weights.

    ``sparsity`` counts every zero, including biases and layer-norm shifts that
    start at zero. ``pool_sparsity`` counts zeros over the global pruning pool
    only: 0 for a freshly built model and rho after global pruning at rho.
    """
    total = registry.total_count
    nonzero = nonzero_count(model)
    pool = registry.resolve(Selector.of(None, *WEIGHT_KINDS))
    pool_size = sum(registry.count(pid) for pid in pool)
    pool_zeros = pool_size - nonzero_count(model, pool)
    flops = weight_flops(config, registry)
    core = attention_core_flops(config)
    dense = sum(flops.values()) + core
    effective = core
    for pid, value in flops.items():
        if value:
            data = model.params[pid].data
            effective += value * np.count_nonzero(data) / data.size
    return CostReport(
        total_params=total,
        nonzero_params=nonzero,
        sparsity=1.0 - nonzero / total,
        pool_params=pool_size,
        pool_sparsity=pool_zeros / pool_size,
        dense_flops=dense,
        flops_per_step=float(effective),
        sparse_size_bytes=nonzero * (VALUE_BYTES + INDEX_BYTES),
    )
