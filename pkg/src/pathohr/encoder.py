"""Deterministic patch encoder.

A seeded two-layer random-projection MLP standing in for a pretrained
patch-feature extractor: flatten -> scale to [0,1] -> linear -> GELU ->
linear -> L2-normalize.  Same (seed, dims, patch) always yields the same
embedding, bit for bit.
"""

from __future__ import annotations

import numpy as np

from .autodiff import gelu
from .errors import DimensionError, EmptyInputError, NumericError
from .patches import PatchGrid
from .rng import RngStream
from .tokens import TokenSet

_WEIGHT_STREAM = 0xE0C0DE  # stream id reserved for encoder weights


class EncoderParams:
    """Frozen weights of the patch encoder, derived from (seed, dims)."""

    def __init__(self, seed: int, input_dim: int, hidden_dim: int = 256, out_dim: int = 1024):
        if input_dim < 1 or hidden_dim < 1 or out_dim < 1:
            raise ValueError("encoder dims must be positive")
        self.seed = seed
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        rng = RngStream(seed, _WEIGHT_STREAM)
        self.w1 = rng.normal(0.0, 1.0 / np.sqrt(input_dim), size=(input_dim, hidden_dim))
        self.b1 = rng.normal(0.0, 0.02, size=hidden_dim)
        self.w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), size=(hidden_dim, out_dim))
        self.b2 = rng.normal(0.0, 0.02, size=out_dim)

    @classmethod
    def for_patch_size(cls, seed: int, patch_size: int, hidden_dim: int = 256, out_dim: int = 1024):
        return cls(seed, patch_size * patch_size, hidden_dim, out_dim)


def _encode_matrix(flat: np.ndarray, params: EncoderParams) -> np.ndarray:
    x = flat.astype(np.float64) / 255.0
    h = gelu(x @ params.w1 + params.b1)
    y = h @ params.w2 + params.b2
    norms = np.linalg.norm(y, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise NumericError("zero-norm embedding cannot be normalized")
    return y / norms


def encode_patch(patch: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Embed one pixel payload into a unit-norm out_dim vector."""
    flat = np.asarray(patch).reshape(-1)
    if flat.shape[0] != params.input_dim:
        raise DimensionError(
            f"patch has {flat.shape[0]} pixels, encoder expects {params.input_dim}"
        )
    return _encode_matrix(flat[None, :], params)[0]


def encode_grid(grid: PatchGrid, params: EncoderParams) -> TokenSet:
    """Embed every retained patch; one token per patch, in grid order."""
    if len(grid) == 0:
        raise EmptyInputError("cannot encode an empty patch grid")
    flat = np.stack([p.pixels.reshape(-1) for p in grid.patches])
    if flat.shape[1] != params.input_dim:
        raise DimensionError(
            f"patch size {grid.patch_size} incompatible with encoder input_dim {params.input_dim}"
        )
    embeddings = _encode_matrix(flat, params)
    return TokenSet(
        tokens=embeddings,
        sizes=np.ones(len(grid), dtype=np.int64),
        positions=grid.coordinates,
    )
