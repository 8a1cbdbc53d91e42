"""Synthetic speech-proxy dataset containers."""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from app.models import Split


@dataclass(frozen=True)
class Utterance:
    """One (frames, transcript) pair; frames are [frames_per_token * len(target), d_in]."""
    frames: np.ndarray
    target: Tuple[int, ...]


@dataclass(frozen=True)
class Dataset:
    """Immutable list of utterances for one split."""
    split: Split
    items: Tuple[Utterance, ...]

    def __len__(self) -> int:
        return len(self.items)

    @property
    def references(self) -> List[Tuple[int, ...]]:
        return [u.target for u in self.items]

    def head(self, n: int) -> "Dataset":
        return Dataset(split=self.split, items=self.items[:n])
