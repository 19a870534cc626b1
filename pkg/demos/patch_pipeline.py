"""
From a synthetic slide to patch tokens
======================================

Walks the front half of the pipeline: generate a slide image, find the
tissue with Otsu's threshold, tile the tissue into patches, and embed
each patch as a token vector.
"""

import numpy as np

from pathohr.encoder import EncoderParams, encode_grid
from pathohr.patches import build_tissue_mask, extract_patches, histogram_256, otsu_threshold
from pathohr.synthetic import gen_synthetic_slide

# a positive slide: dark elliptical tissue on a bright background, with a
# checkerboard signal stamped into a fraction of its tissue tiles
slide = gen_synthetic_slide(seed=7, width=128, height=128, label=1,
                            signal_fraction=0.3)
print("slide image:", slide.image.shape, slide.image.dtype,
      "label:", slide.label)

# Otsu picks the gray level separating tissue from background
otsu = otsu_threshold(histogram_256(slide.image))
print("otsu threshold level:", otsu.level, "degenerate:", otsu.degenerate)

mask = build_tissue_mask(slide.image, otsu)
print("tissue fraction of the slide: %.2f" % mask.mean())

# keep 16x16 tiles that are at least half tissue
grid = extract_patches(slide.image, mask, patch_size=16, min_tissue_fraction=0.5)
print("tiles kept:", len(grid), "of", (128 // 16) ** 2)

# every kept tile becomes one token; positions remember the grid cell
params = EncoderParams.for_patch_size(seed=0, patch_size=16, hidden_dim=64,
                                      out_dim=16)
tokens = encode_grid(grid, params)
print("token set:", len(tokens), "tokens of dim", tokens.dim)
print("first token position (row, col):", tuple(int(v) for v in tokens.positions[0]))
print("token norms: min %.2f  max %.2f"
      % (np.linalg.norm(tokens.values, axis=1).min(),
         np.linalg.norm(tokens.values, axis=1).max()))
