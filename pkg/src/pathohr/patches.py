"""Slide-to-patch pipeline: Otsu tissue masking, hole elimination, tiling.

A slide is a 2-D uint8 grayscale array (stained tissue dark, background
bright).  The pipeline thresholds it with Otsu's method, eliminates
enclosed background holes, and cuts the tissue into fixed-size patches.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import EmptyInputError

# 4-connectivity for hole elimination
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class OtsuResult(NamedTuple):
    level: int
    degenerate: bool


def histogram_256(image: np.ndarray) -> np.ndarray:
    """256-bin intensity histogram of a uint8 image."""
    image = np.asarray(image)
    return np.bincount(image.ravel().astype(np.uint8), minlength=256)[:256]


def otsu_threshold(histogram: np.ndarray) -> OtsuResult:
    """Threshold level maximizing between-class variance.

    Classes are split as {level <= t} vs {level > t}; ties are broken by
    the smallest level.  A histogram whose between-class variance is zero
    everywhere (constant image) returns level 0 flagged degenerate.

    Args:
        histogram: 256 non-negative counts.

    Returns:
        OtsuResult(level, degenerate).

    Raises:
        EmptyInputError: all counts are zero.
    """
    hist = np.asarray(histogram, dtype=np.float64)
    if hist.shape != (256,):
        raise EmptyInputError("histogram must have exactly 256 bins")
    total = hist.sum()
    if total == 0:
        raise EmptyInputError("empty image: histogram has zero total count")

    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)                      # counts in class {<= t}
    m0 = np.cumsum(hist * levels)             # first moment of class {<= t}
    w1 = total - w0
    m_total = m0[-1]

    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = np.where(w0 > 0, m0 / w0, 0.0)
        mu1 = np.where(w1 > 0, (m_total - m0) / w1, 0.0)
        between = w0 * w1 * (mu0 - mu1) ** 2

    best = float(between.max())
    if best <= 0.0:
        return OtsuResult(0, True)
    level = int(np.argmax(between))           # argmax returns the first (smallest) tie
    return OtsuResult(level, False)


def build_tissue_mask(image: np.ndarray, threshold) -> np.ndarray:
    """Boolean tissue mask: dark pixels (intensity <= threshold) plus holes.

    Any background region not 4-connected to the image border is an
    enclosed hole and is flipped to tissue.  A degenerate threshold
    (constant image) yields an all-background mask and a warning.
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise EmptyInputError("image must be a non-empty 2-D array")

    if isinstance(threshold, OtsuResult):
        if threshold.degenerate:
            warnings.warn("degenerate Otsu threshold: mask is all background", stacklevel=2)
            return np.zeros(image.shape, dtype=bool)
        level = threshold.level
    else:
        level = int(threshold)

    tissue = image <= level
    background = ~tissue
    labels, count = ndimage.label(background, structure=_CROSS)
    if count == 0:
        return tissue

    border = np.zeros(image.shape, dtype=bool)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    border_labels = np.unique(labels[border & background])
    # holes = background components whose label never touches the border
    hole = background & ~np.isin(labels, border_labels)
    return tissue | hole


@dataclass
class Patch:
    grid_row: int
    grid_col: int
    pixels: np.ndarray
    tissue_fraction: float


@dataclass
class PatchGrid:
    """Tissue-bearing patches tiled from one slide, in row-major grid order."""

    patch_size: int
    patches: list

    def __len__(self) -> int:
        return len(self.patches)

    @property
    def coordinates(self) -> np.ndarray:
        return np.array([(p.grid_row, p.grid_col) for p in self.patches], dtype=np.int64)


def extract_patches(
    image: np.ndarray,
    mask: np.ndarray,
    patch_size: int,
    min_tissue_fraction: float = 0.5,
) -> PatchGrid:
    """Cut the slide into non-overlapping patch_size tiles anchored at (0,0).

    Partial border tiles are discarded; a tile is retained iff its tissue
    fraction is >= min_tissue_fraction.  Output order is row-major by grid
    coordinate.
    """
    image = np.asarray(image)
    mask = np.asarray(mask, dtype=bool)
    if image.shape != mask.shape:
        raise EmptyInputError("image and mask dimensions differ")
    if patch_size < 1:
        raise ValueError("patch_size must be >= 1")
    if not 0.0 <= min_tissue_fraction <= 1.0:
        raise ValueError("min_tissue_fraction must be in [0, 1]")

    h, w = image.shape
    n_rows, n_cols = h // patch_size, w // patch_size
    if n_rows == 0 or n_cols == 0:
        warnings.warn("patch_size larger than image: empty grid", stacklevel=2)
        return PatchGrid(patch_size, [])

    area = float(patch_size * patch_size)
    kept = []
    for r in range(n_rows):
        for c in range(n_cols):
            y, x = r * patch_size, c * patch_size
            tile_mask = mask[y : y + patch_size, x : x + patch_size]
            fraction = float(tile_mask.sum()) / area
            if fraction >= min_tissue_fraction:
                kept.append(Patch(r, c, image[y : y + patch_size, x : x + patch_size].copy(), fraction))
    return PatchGrid(patch_size, kept)
