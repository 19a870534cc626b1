"""
Scoring tokens and merging them
===============================

Shows the six similarity methods on one pair of token sets, then the two
merge mechanisms: pooled-query cross attention (halves the count per
round) and bipartite pair matching (removes exactly r tokens).
"""

import numpy as np

from pathohr.merge import MergeConfig, atm_merge, tome_merge
from pathohr.rng import RngStream
from pathohr.similarity import (
    METHODS,
    SemanticProjector,
    SimilarityConfig,
    compute_similarity,
    pool_queries,
)
from pathohr.tokens import TokenSet

rng = RngStream(4, 0xDE30)
tokens = TokenSet(rng.normal(0.0, 1.0, size=(8, 16)))

# pooled queries: adjacent pairs averaged, so 8 tokens propose 4 queries
queries = pool_queries(tokens)
print("queries:", len(queries), "sizes:", queries.sizes.tolist())

projector = SemanticProjector.create(16, seed=1)
for method in METHODS:
    if method == "tome":
        continue  # tome scores a single set against itself, shown below
    cfg = SimilarityConfig(method=method, temperature=0.5)
    sm = compute_similarity(queries.values, tokens.values, cfg,
                            projector=projector)
    rows = np.asarray(sm.scores).sum(axis=1)
    print("%-18s row sums %s  normalized=%s"
          % (method, np.round(rows, 3).tolist(), sm.row_normalized))

# attention merge: 8 -> 4 -> 2, every output token a convex mix of inputs
res = atm_merge(tokens, MergeConfig(target_tokens=2, merge_threshold=0.0),
                SimilarityConfig(method="cosine"))
print("\nattention merge: rounds", res.rounds, "->", len(res.tokens),
      "tokens, sizes", res.tokens.sizes.tolist())
print("provenance rows sum to 1:",
      np.allclose(res.provenance.sum(axis=1), 1.0))

# bipartite merge: the 3 most similar even/odd pairs collapse, order kept
res = tome_merge(tokens, r=3)
print("bipartite merge: 8 - 3 =", len(res.tokens), "tokens, sizes",
      res.tokens.sizes.tolist())
print("size mass conserved:", res.tokens.sizes.sum() == tokens.sizes.sum())
