"""Seeded toy-slide generator with class signal carried by texture.

Slides have a bright noisy background (around 230) and a dark elliptical
tissue blob (around 90).  Positive slides additionally carry a +/-30
checkerboard micro-texture on a fraction of the tissue-interior tiles.
The checker is mean-preserving per tile, so both classes present the same
intensity histogram to Otsu masking; only local morphology differs.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .errors import ConfigError
from .metrics import split_indices
from .pgm import read_pgm, write_pgm
from .rng import RngStream

_SLIDE_STREAM = 0x51DE
_DATASET_STREAM = 0xDA7A

SIGNAL_AMPLITUDE = 30.0


@dataclass
class SyntheticSlide:
    image: np.ndarray  # (height, width) uint8
    label: int
    signal_fraction: float
    seed: int


def _tissue_tiles(mask: np.ndarray, patch_size: int) -> List[Tuple[int, int]]:
    """Grid tiles lying entirely inside the tissue blob."""
    h, w = mask.shape
    tiles = []
    for r in range(0, h - patch_size + 1, patch_size):
        for c in range(0, w - patch_size + 1, patch_size):
            if mask[r:r + patch_size, c:c + patch_size].all():
                tiles.append((r, c))
    return tiles


def gen_synthetic_slide(seed: int, width: int, height: int, label: int,
                        signal_fraction: float, patch_size: int = 16) -> SyntheticSlide:
    """One deterministic toy slide.

    Positive labels paint a checkerboard texture over ~signal_fraction of
    the fully-tissue tiles (patch_size granularity, rounding to whole
    tiles); negatives get plain tissue noise.
    """
    if width < patch_size or height < patch_size:
        raise ConfigError(f"slide dims {width}x{height} below patch size {patch_size}")
    if label not in (0, 1):
        raise ConfigError(f"label must be 0 or 1, got {label}")
    if not 0.0 <= signal_fraction <= 1.0:
        raise ConfigError(f"signal_fraction {signal_fraction} outside [0, 1]")
    if label == 1 and signal_fraction == 0.0:
        raise ConfigError("a positive slide with signal_fraction 0 carries no signal")

    rng = RngStream(seed, _SLIDE_STREAM)
    img = rng.normal(230.0, 8.0, size=(height, width))

    cy = height / 2.0 + rng.uniform(-height / 16.0, height / 16.0)
    cx = width / 2.0 + rng.uniform(-width / 16.0, width / 16.0)
    ry = height * rng.uniform(0.38, 0.46)
    rx = width * rng.uniform(0.38, 0.46)
    yy, xx = np.mgrid[0:height, 0:width]
    tissue = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    img[tissue] = rng.normal(90.0, 8.0, size=int(tissue.sum()))

    if label == 1:
        tiles = _tissue_tiles(tissue, patch_size)
        if not tiles:
            raise ConfigError("slide too small: no fully-tissue tile to carry signal")
        k = max(1, int(round(signal_fraction * len(tiles))))
        chosen = rng.choice(len(tiles), size=k, replace=False)
        checker = np.where((yy + xx) % 2 == 0, SIGNAL_AMPLITUDE, -SIGNAL_AMPLITUDE)
        for t in chosen:
            r, c = tiles[int(t)]
            img[r:r + patch_size, c:c + patch_size] += checker[r:r + patch_size, c:c + patch_size]

    image = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return SyntheticSlide(image=image, label=label, signal_fraction=signal_fraction, seed=seed)


def gen_dataset(n_slides: int, class_balance: float, seed: int,
                width: int = 96, height: int = 96,
                signal_fraction: float = 0.3, patch_size: int = 16
                ) -> Tuple[List[SyntheticSlide], Dict[str, np.ndarray]]:
    """Balanced slide list plus a deterministic 8:1:1 split."""
    if n_slides < 10:
        raise ConfigError("need at least 10 slides for an 8:1:1 split")
    if not 0.0 < class_balance < 1.0:
        raise ConfigError(f"class_balance {class_balance} must be inside (0, 1)")
    n_pos = int(round(n_slides * class_balance))
    if n_pos == 0 or n_pos == n_slides:
        raise ConfigError("class balance leaves one class empty")
    rng = RngStream(seed, _DATASET_STREAM)
    slide_seeds = rng.integers(0, 2 ** 31 - 1, size=n_slides)
    labels = np.array([1] * n_pos + [0] * (n_slides - n_pos))
    slides = [
        gen_synthetic_slide(int(slide_seeds[i]), width, height, int(labels[i]),
                            signal_fraction if labels[i] else 0.0, patch_size)
        for i in range(n_slides)
    ]
    return slides, split_indices(n_slides, seed)


def write_dataset(slides: List[SyntheticSlide], splits: Dict[str, np.ndarray],
                  out_dir: str, extra_config: dict | None = None) -> str:
    """PGM files plus manifest.csv (filename,label,split); returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    split_of = {}
    for name, idx in splits.items():
        for i in idx:
            split_of[int(i)] = name
    manifest = os.path.join(out_dir, "manifest.csv")
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "label", "split"])
        for i, slide in enumerate(slides):
            fname = f"slide_{i:04d}.pgm"
            write_pgm(os.path.join(out_dir, fname), slide.image)
            writer.writerow([fname, slide.label, split_of[i]])
    config = {"n_slides": len(slides), "splits": {k: len(v) for k, v in splits.items()}}
    config.update(extra_config or {})
    with open(os.path.join(out_dir, "dataset_config.json"), "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
    return manifest


def load_dataset(data_dir: str) -> Tuple[List[np.ndarray], np.ndarray, Dict[str, np.ndarray]]:
    """Read back (images, labels, splits) from a written dataset directory."""
    manifest = os.path.join(data_dir, "manifest.csv")
    with open(manifest, newline="") as fh:
        rows = list(csv.DictReader(fh))
    images, labels = [], []
    splits: Dict[str, list] = {"train": [], "val": [], "test": []}
    for i, row in enumerate(rows):
        images.append(read_pgm(os.path.join(data_dir, row["filename"])))
        labels.append(int(row["label"]))
        splits[row["split"]].append(i)
    return images, np.array(labels), {k: np.array(v, dtype=np.int64) for k, v in splits.items()}
