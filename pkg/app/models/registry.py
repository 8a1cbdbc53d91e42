"""Parameter registry: the addressing scheme for pruning and diagnostics."""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from app.models import Side, ComponentKind
from app.services.exceptions import ConfigError, SelectorError


@dataclass(frozen=True)
class ComponentTag:
    """(side, component kind, 1-based layer) of one parameter tensor."""
    side: Side
    kind: ComponentKind
    layer: Optional[int] = None

    def __post_init__(self):
        if self.kind == ComponentKind.CROSS_ATTN and self.side != Side.DECODER:
            raise ConfigError("cross_attn parameters must sit on the decoder", "cross_attn_side")
        if self.kind in (ComponentKind.CONV, ComponentKind.POS_EMB) and self.side == Side.DECODER:
            raise ConfigError(f"{self.kind.value} parameters cannot sit on the decoder", "encoder_kinds")
        if self.kind in (ComponentKind.OUTPUT_PROJ, ComponentKind.TOKEN_EMB) and self.side == Side.ENCODER:
            raise ConfigError(f"{self.kind.value} parameters cannot sit on the encoder", "decoder_kinds")
        if self.layer is not None and self.layer < 1:
            raise ConfigError("layer indices are 1-based", "layer_index")


@dataclass(frozen=True)
class RegistryEntry:
    parameter_id: str
    tag: ComponentTag
    count: int


class Selector(BaseModel):
    """Filter over registry entries: side, kind set and inclusive layer range.

    Unset fields match everything. A layer range only matches parameters that
    belong to a numbered layer.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    side: Optional[Side] = None
    kinds: Optional[Tuple[ComponentKind, ...]] = None
    layers: Optional[Tuple[int, int]] = None

    @field_validator("kinds")
    @classmethod
    def _canonical_kinds(cls, value):
        if value is None:
            return None
        if not value:
            raise ValueError("kinds must be non-empty when given")
        order = list(ComponentKind)
        return tuple(sorted(set(value), key=order.index))

    @model_validator(mode="after")
    def _check_layers(self):
        if self.layers is not None:
            low, high = self.layers
            if low < 1 or high < low:
                raise ValueError(f"invalid layer range {self.layers}")
        return self

    @classmethod
    def of(cls, side: Optional[Side] = None, *kinds: ComponentKind, layers: Optional[Tuple[int, int]] = None) -> "Selector":
        return cls(side=side, kinds=tuple(kinds) if kinds else None, layers=layers)

    def matches(self, tag: ComponentTag) -> bool:
        if self.side is not None and tag.side != self.side:
            return False
        if self.kinds is not None and tag.kind not in self.kinds:
            return False
        if self.layers is not None:
            if tag.layer is None or not (self.layers[0] <= tag.layer <= self.layers[1]):
                return False
        return True

    @property
    def side_label(self) -> str:
        return self.side.value if self.side is not None else "all"

    @property
    def kind_label(self) -> str:
        return "+".join(k.value for k in self.kinds) if self.kinds is not None else "all"

    @property
    def layer_label(self) -> str:
        if self.layers is None:
            return "all"
        low, high = self.layers
        return str(low) if low == high else f"{low}-{high}"

    @property
    def label(self) -> str:
        return f"{self.side_label}/{self.kind_label}/{self.layer_label}"

    def __str__(self) -> str:
        return self.label


class ParameterRegistry:
    """Ordered map from parameter id to (tag, element count)."""

    def __init__(self, entries: Iterable[RegistryEntry]):
        self.entries: List[RegistryEntry] = list(entries)
        self._by_id: Dict[str, RegistryEntry] = {}
        for entry in self.entries:
            if entry.parameter_id in self._by_id:
                raise ConfigError(f"Parameter '{entry.parameter_id}' registered twice", "unique_ids")
            self._by_id[entry.parameter_id] = entry

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, parameter_id: str) -> bool:
        return parameter_id in self._by_id

    @property
    def ids(self) -> List[str]:
        return [e.parameter_id for e in self.entries]

    @property
    def total_count(self) -> int:
        return sum(e.count for e in self.entries)

    def tag(self, parameter_id: str) -> ComponentTag:
        return self._by_id[parameter_id].tag

    def count(self, parameter_id: str) -> int:
        return self._by_id[parameter_id].count

    def kinds_present(self) -> List[ComponentKind]:
        seen = {e.tag.kind for e in self.entries}
        return [k for k in ComponentKind if k in seen]

    def resolve(self, selector: Selector) -> List[str]:
        """Parameter ids matched by ``selector``, in registry order."""
        matched = [e.parameter_id for e in self.entries if selector.matches(e.tag)]
        if not matched:
            raise SelectorError(selector)
        return matched

    def selected_count(self, selector: Selector) -> int:
        return sum(self.count(pid) for pid in self.resolve(selector))

    def layers_on(self, side: Side) -> List[int]:
        return sorted({e.tag.layer for e in self.entries if e.tag.side == side and e.tag.layer is not None})

    def side_counts(self) -> Dict[Side, int]:
        counts = {side: 0 for side in Side}
        for entry in self.entries:
            counts[entry.tag.side] += entry.count
        return counts


def parameter_shares(registry: ParameterRegistry) -> Dict[str, float]:
    """Fraction of all parameters held by each side."""
    total = registry.total_count
    return {side.value: count / total for side, count in registry.side_counts().items()}


def selectors_overlap(registry: ParameterRegistry, selectors: Sequence[Selector]) -> Optional[Tuple[str, Selector, Selector]]:
    """First parameter claimed by two selectors, if any."""
    owner: Dict[str, Selector] = {}
    for selector in selectors:
        for pid in registry.resolve(selector):
            if pid in owner:
                return pid, owner[pid], selector
            owner[pid] = selector
    return None
