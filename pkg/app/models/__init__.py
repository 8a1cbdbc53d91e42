"""Domain models for prune-lab."""

from enum import Enum


class Side(str, Enum):
    """Which half of the encoder-decoder a parameter lives in."""
    ENCODER = "encoder"
    DECODER = "decoder"
    SHARED = "shared"


class ComponentKind(str, Enum):
    """Architectural component of a parameter (the component-table rows)."""
    CONV = "conv"
    POS_EMB = "pos_emb"
    TOKEN_EMB = "token_emb"
    SELF_ATTN = "self_attn"
    CROSS_ATTN = "cross_attn"
    FFN = "ffn"
    LAYER_NORM = "layer_norm"
    BIAS = "bias"
    OUTPUT_PROJ = "output_proj"


class Block(str, Enum):
    """Contiguous layer block of one side."""
    EARLY = "early"
    MID = "mid"
    LATE = "late"


class Split(str, Enum):
    """Dataset split."""
    TRAIN = "train"
    TEST_CLEAN = "test_clean"
    TEST_OTHER = "test_other"


class Provenance(str, Enum):
    """Where a prune plan came from."""
    RECIPE = "recipe"
    GREEDY = "greedy"
    MANUAL = "manual"


class SweepScope(str, Enum):
    """What a sweep prunes per cell."""
    GLOBAL = "global"
    SIDE = "side"
    LAYER_BLOCKS = "layer_blocks"
    COMPONENTS = "components"


class CellStatus(str, Enum):
    """Outcome of one sweep cell."""
    OK = "ok"
    FAILED = "failed"


# Global pruning pool: trained weight matrices and embedding tables.
WEIGHT_KINDS = (
    ComponentKind.CONV,
    ComponentKind.TOKEN_EMB,
    ComponentKind.SELF_ATTN,
    ComponentKind.CROSS_ATTN,
    ComponentKind.FFN,
    ComponentKind.OUTPUT_PROJ,
)

# What a layer block prunes: attention and FFN weight matrices.
BLOCK_KINDS = (ComponentKind.SELF_ATTN, ComponentKind.CROSS_ATTN, ComponentKind.FFN)


from app.models.registry import ComponentTag, RegistryEntry, ParameterRegistry, Selector
from app.models.dataset import Utterance, Dataset
from app.models.transformer import TransformerModel

__all__ = [
    "Side",
    "ComponentKind",
    "Block",
    "Split",
    "Provenance",
    "SweepScope",
    "CellStatus",
    "WEIGHT_KINDS",
    "BLOCK_KINDS",
    "ComponentTag",
    "RegistryEntry",
    "ParameterRegistry",
    "Selector",
    "Utterance",
    "Dataset",
    "TransformerModel",
]
