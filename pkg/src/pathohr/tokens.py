"""Token containers passed between the similarity, merge, and encoder stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import Tensor, value_of
from .errors import DimensionError


@dataclass
class TokenSet:
    """A sequence of d-dim token vectors with per-token merge sizes.

    `tokens` is an (n, d) matrix (ndarray, or Tensor when gradients are
    being recorded).  `sizes[i]` counts how many original tokens the i-th
    vector represents; merging conserves the total.  `positions` optionally
    carries (row, col) grid coordinates for positional encodings.
    """

    tokens: "np.ndarray | Tensor"
    sizes: np.ndarray = field(default=None)
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        data = value_of(self.tokens)
        if data.ndim != 2:
            raise DimensionError("tokens must be an (n, d) matrix")
        n = data.shape[0]
        if self.sizes is None:
            self.sizes = np.ones(n, dtype=np.int64)
        else:
            self.sizes = np.asarray(self.sizes, dtype=np.int64)
            if self.sizes.shape != (n,):
                raise DimensionError("sizes must have one entry per token")
        if self.positions is not None:
            self.positions = np.asarray(self.positions, dtype=np.int64)
            if self.positions.shape != (n, 2):
                raise DimensionError("positions must be (n, 2) grid coordinates")

    def __len__(self) -> int:
        return value_of(self.tokens).shape[0]

    @property
    def dim(self) -> int:
        return value_of(self.tokens).shape[1]

    @property
    def values(self) -> np.ndarray:
        """Plain ndarray view of the token matrix."""
        return value_of(self.tokens)


@dataclass
class SimilarityMatrix:
    """Query-by-key similarity scores produced by one of the six methods."""

    scores: "np.ndarray | Tensor"
    method: str
    row_normalized: bool = False

    def __post_init__(self):
        data = value_of(self.scores)
        if data.ndim != 2 or data.size == 0:
            raise DimensionError("similarity scores must be a non-empty matrix")

    @property
    def rows(self) -> int:
        return value_of(self.scores).shape[0]

    @property
    def cols(self) -> int:
        return value_of(self.scores).shape[1]
