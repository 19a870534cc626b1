"""Token merging (ATM and bipartite matching) plus fuzzy positional encodings.

Adaptive token merge (ATM) treats pooled tokens as cross-attention queries
over the full token set.  Each round halves the count (ceil(n/2)); rounds
repeat until the count reaches the target.  Bipartite (tome) merging instead
pairs tokens across an alternate-index partition and merges the top-r pairs
by size-weighted averaging.

Every merged token is a convex combination of its sources; `provenance`
carries those combination weights back to the original token indices, and
integer size mass is conserved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import (
    Tensor,
    add,
    div,
    matmul,
    mul,
    reduce_sum,
    reshape,
    softmax_rows,
    take_rows,
    value_of,
)
from .errors import ConfigError, DimensionError, MergeNotApplicable
from .rng import RngStream
from .similarity import SemanticProjector, SimilarityConfig, compute_similarity, pool_queries, tome_partition
from .tokens import SimilarityMatrix, TokenSet

_TABLE_STREAM = 0xF0E


@dataclass
class MergeConfig:
    """Merge-stage knobs.

    `merge_threshold` is Algorithm-style sparsification (scores below it are
    dropped before row normalization); it is distinct from the similarity
    temperature.  `mode` picks the mechanism; `tome_r` only applies to
    standalone bipartite merging.
    """

    merge_threshold: float = 0.0
    target_tokens: int = 64
    tome_r: int = 0
    residual: bool = True
    mode: str = "atm"

    def __post_init__(self):
        if self.mode not in ("atm", "tome"):
            raise ConfigError(f"merge mode must be 'atm' or 'tome', got {self.mode!r}")
        if self.target_tokens < 1:
            raise ConfigError("target_tokens must be >= 1")
        if self.tome_r < 0:
            raise ConfigError("tome_r must be >= 0")
        if not np.isfinite(self.merge_threshold):
            raise ConfigError("merge_threshold must be finite")


@dataclass
class MergeResult:
    """Merged tokens plus, for each output token, its source weights.

    `provenance[i, j]` is the convex weight of original token j in output
    token i (residual contributions excluded); rows sum to 1.  `rounds`
    counts halving iterations performed.
    """

    tokens: TokenSet
    provenance: np.ndarray
    rounds: int = 0


def _merge_weights(sim: SimilarityMatrix, threshold: float):
    """Row-stochastic combination weights after threshold sparsification.

    Scores below the threshold are excluded before normalization.  Methods
    that already produce softmax rows are renormalized over the survivors;
    raw-score methods get a softmax over the survivors.  Rows left with no
    survivor fall back to uniform weights.
    """
    scores = sim.scores
    data = value_of(scores)
    m, n = data.shape
    mask = (data >= threshold).astype(np.float64)
    if sim.row_normalized:
        if mask.all():
            return scores
        masked = mul(scores, mask)
        rowsum = reduce_sum(masked, axis=1, keepdims=True)
        rowkeep = (value_of(rowsum) > 0.0).astype(np.float64)
        weights = div(masked, add(rowsum, 1.0 - rowkeep))
        if not rowkeep.all():
            weights = add(mul(weights, rowkeep), (1.0 - rowkeep) * (1.0 / n))
        return weights
    # raw scores: -1e300 absorbs any finite score, so fully-masked rows
    # degenerate to equal logits, i.e. the uniform fallback, inside softmax
    if mask.all():
        return softmax_rows(scores)
    return softmax_rows(add(scores, (1.0 - mask) * -1e300))


def atm_merge(tokens: TokenSet, cfg: MergeConfig, sim_cfg: SimilarityConfig,
              projector: Optional[SemanticProjector] = None,
              project_q=None, project_k=None) -> MergeResult:
    """Halve the token count via pooled-query cross attention until it is
    at most cfg.target_tokens.

    Per round: pool adjacent pairs into queries, score them against all
    current tokens with the configured similarity, sparsify at the merge
    threshold, and take the weighted convex combination.  With residual on,
    the pooled queries are added to the combination elementwise.  Output
    sizes are the pooled pair sums, so size mass is conserved.

    `project_q` / `project_k` optionally map the raw tokens into the
    similarity space first (the encoder's projection head); the combination
    itself always acts on the unprojected tokens.
    """
    n = len(tokens)
    if n < 2:
        raise MergeNotApplicable("adaptive merge needs at least 2 tokens")
    current = tokens
    provenance = np.eye(n)
    rounds = 0
    while len(current) > cfg.target_tokens:
        pooled = pool_queries(current)
        q = pooled.tokens if project_q is None else project_q(pooled.tokens)
        k = current.tokens if project_k is None else project_k(current.tokens)
        sim = compute_similarity(q, k, sim_cfg, projector)
        weights = _merge_weights(sim, cfg.merge_threshold)
        merged = matmul(weights, current.tokens)
        if cfg.residual:
            merged = add(merged, pooled.tokens)
        provenance = value_of(weights) @ provenance
        current = TokenSet(merged, sizes=pooled.sizes)
        rounds += 1
    return MergeResult(tokens=current, provenance=provenance, rounds=rounds)


def tome_merge(tokens: TokenSet, r: int) -> MergeResult:
    """Merge the r highest-scoring bipartite pairs by size-weighted average.

    Tokens at even sequence positions propose their best odd-position match
    (cosine score); the top-r proposals merge into their targets, each
    result sitting at the target's original position with summed size.
    Output count is exactly n - r and survivor order is preserved.
    """
    n = len(tokens)
    if r < 0 or r > n // 2:
        raise MergeNotApplicable(f"r={r} outside [0, {n // 2}] for {n} tokens")
    if r == 0:
        return MergeResult(tokens=TokenSet(tokens.tokens, sizes=tokens.sizes.copy(),
                                           positions=tokens.positions),
                           provenance=np.eye(n), rounds=0)
    a_idx, b_idx = tome_partition(n)
    values = tokens.values
    # unit-normalize for cosine scoring; zero rows stay zero
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    unit = np.divide(values, norms, out=np.zeros_like(values), where=norms > 0)
    scores = unit[a_idx] @ unit[b_idx].T
    best_b = np.argmax(scores, axis=1)
    best_score = scores[np.arange(len(a_idx)), best_b]
    ranked = np.argsort(-best_score, kind="stable")[:r]
    merged_a = a_idx[ranked]
    dst_b = b_idx[best_b[ranked]]

    sizes = tokens.sizes.astype(np.float64)
    group = np.zeros((n, n))  # group[dst, src] = raw size weight
    group[np.arange(n), np.arange(n)] = sizes
    group[dst_b, merged_a] = sizes[merged_a]
    group[merged_a, merged_a] = 0.0
    survivors = np.setdiff1d(np.arange(n), merged_a)
    weights = group[survivors]
    weights = weights / weights.sum(axis=1, keepdims=True)

    merged_tokens = matmul(weights, tokens.tokens)
    out_sizes = (group[survivors].sum(axis=1)).astype(np.int64)
    return MergeResult(tokens=TokenSet(merged_tokens, sizes=out_sizes),
                       provenance=weights, rounds=1)


def merge_tokens(tokens: TokenSet, cfg: MergeConfig, sim_cfg: SimilarityConfig,
                 projector: Optional[SemanticProjector] = None,
                 project_q=None, project_k=None) -> MergeResult:
    """Model-facing dispatch: ATM as configured, or halving bipartite rounds.

    In tome mode each round merges floor(n/2) pairs, matching ATM's halving
    schedule so the pooled residual stays shape-compatible (bipartite
    scoring uses the raw tokens; projections apply to ATM only).
    """
    if cfg.mode == "atm":
        return atm_merge(tokens, cfg, sim_cfg, projector, project_q, project_k)
    n = len(tokens)
    if n < 2:
        raise MergeNotApplicable("bipartite merge needs at least 2 tokens")
    current = tokens
    provenance = np.eye(n)
    rounds = 0
    while len(current) > cfg.target_tokens:
        step = tome_merge(current, len(current) // 2)
        merged = step.tokens.tokens
        if cfg.residual:
            merged = add(merged, pool_queries(current).tokens)
        provenance = step.provenance @ provenance
        current = TokenSet(merged, sizes=step.tokens.sizes)
        rounds += 1
    return MergeResult(tokens=current, provenance=provenance, rounds=rounds)


# ---------------------------------------------------------------------------
# fuzzy positional encodings
# ---------------------------------------------------------------------------

class PositionalEncoding:
    """Learnable positional table over grid coordinates with a fuzz switch.

    In train mode, lookups are jittered by per-token offsets drawn uniformly
    from [-0.5, 0.5) on each axis and resolved by bilinear interpolation of
    the table; in inference mode the lookup is exact.
    """

    def __init__(self, table, mode: str = "inference"):
        shape = value_of(table).shape
        if len(shape) != 3:
            raise DimensionError("positional table must be (rows, cols, dim)")
        if mode not in ("train", "inference"):
            raise ConfigError(f"fuzz mode must be 'train' or 'inference', got {mode!r}")
        self.table = table
        self.mode = mode
        self.rows, self.cols, self.dim = shape

    @classmethod
    def create(cls, rows: int, cols: int, dim: int, seed: int = 0,
               scale: float = 0.02, mode: str = "inference") -> "PositionalEncoding":
        rng = RngStream(seed, _TABLE_STREAM)
        return cls(rng.normal(0.0, scale, size=(rows, cols, dim)), mode=mode)


def fuzzy_positional_encoding(pe: PositionalEncoding, positions: np.ndarray,
                              rng: Optional[RngStream] = None):
    """Per-token positional vectors for integer grid coordinates.

    Train mode jitters each coordinate by U(-0.5, 0.5), clamps to the table
    bounds, and bilinearly interpolates; inference mode reads the table
    directly.  Positions outside the table raise IndexError.
    """
    pos = np.asarray(positions)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise DimensionError("positions must be (n, 2)")
    n = pos.shape[0]
    if np.any(pos < 0) or np.any(pos[:, 0] >= pe.rows) or np.any(pos[:, 1] >= pe.cols):
        raise IndexError(
            f"grid positions exceed the {pe.rows}x{pe.cols} positional table"
        )
    flat = reshape(pe.table, (pe.rows * pe.cols, pe.dim))
    if pe.mode == "inference":
        return take_rows(flat, pos[:, 0] * pe.cols + pos[:, 1])
    if rng is None:
        raise ConfigError("train-mode positional fuzzing needs an RngStream")
    offsets = rng.uniform(-0.5, 0.5, size=(n, 2))
    x = np.clip(pos[:, 0] + offsets[:, 0], 0.0, pe.rows - 1.0)
    y = np.clip(pos[:, 1] + offsets[:, 1], 0.0, pe.cols - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, pe.rows - 1)
    y1 = np.minimum(y0 + 1, pe.cols - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    out = mul(take_rows(flat, x0 * pe.cols + y0), (1.0 - fx) * (1.0 - fy))
    out = add(out, mul(take_rows(flat, x0 * pe.cols + y1), (1.0 - fx) * fy))
    out = add(out, mul(take_rows(flat, x1 * pe.cols + y0), fx * (1.0 - fy)))
    out = add(out, mul(take_rows(flat, x1 * pe.cols + y1), fx * fy))
    return out
