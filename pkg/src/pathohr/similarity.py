"""Six token-similarity methods feeding the merge stage.

Every method maps a query set and a key set to a SimilarityMatrix:

    pooled_attention   softmax(q k^T / sqrt(d))           row-normalized
    euclidean          exp(-||q - k|| * tau)              raw scores
    cosine             tau * cos(q, k)                    raw scores
    attention_score    softmax(tau * q k^T / sqrt(d))     row-normalized
    semantic           softmax(f_q(q) f_k(k)^T / sqrt(s)) row-normalized
    tome               bipartite cosine + row softmax     row-normalized

All computations accept plain ndarrays or taped Tensors, so the same code
serves inference and gradient-recorded training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from .autodiff import (
    Tensor,
    _any_tensor,
    add,
    clamp_min,
    concat,
    div,
    exp,
    gelu,
    getitem,
    l2_normalize_rows,
    linear_apply,
    matmul,
    mul,
    reduce_sum,
    reshape,
    softmax_rows,
    sqrt,
    sub,
    transpose,
    value_of,
)
from .errors import ConfigError, DimensionError, EmptyInputError, MergeNotApplicable
from .rng import RngStream
from .tokens import SimilarityMatrix, TokenSet

METHODS = ("pooled_attention", "euclidean", "cosine", "attention_score", "semantic", "tome")

_SEM_STREAM = 0x5E3A


@dataclass
class SimilarityConfig:
    """Method selection plus the scalars the formulas depend on.

    `temperature` is the learnable tau of the exponential-distance, cosine
    and scaled-attention scores; it is not the merge threshold.  `head_dim`
    is the sqrt-scaling dimension; None means "use the token dimension".
    """

    method: str = "attention_score"
    temperature: float = 1.0
    head_dim: Optional[int] = None
    zero_norm_eps: float = 1e-12

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown similarity method {self.method!r}; pick from {METHODS}")
        # temperature may arrive as a taped scalar Tensor during training
        if not np.all(np.isfinite(value_of(self.temperature))):
            raise ConfigError("temperature must be finite")
        if self.head_dim is not None and self.head_dim < 1:
            raise ConfigError("head_dim must be >= 1")
        if self.zero_norm_eps <= 0:
            raise ConfigError("zero_norm_eps must be positive")


class SemanticProjector:
    """Learnable pair of two-layer GELU perceptrons f_q, f_k: d -> d_sem.

    Both projectors share shapes; weights live in a name->array dict so the
    training loop can swap in taped Tensors.
    """

    # f_k has no final-layer bias: a constant shift of every projected key
    # moves each softmax row uniformly and can never change the output
    PARAM_NAMES = ("sem_q_w1", "sem_q_b1", "sem_q_w2", "sem_q_b2",
                   "sem_k_w1", "sem_k_b1", "sem_k_w2")

    def __init__(self, params: dict):
        missing = [k for k in self.PARAM_NAMES if k not in params]
        if missing:
            raise ConfigError(f"semantic projector missing params {missing}")
        self.params = params
        qw1, kw1 = value_of(params["sem_q_w1"]), value_of(params["sem_k_w1"])
        if qw1.shape != kw1.shape:
            raise DimensionError("f_q and f_k must have identical shapes")
        self.dim = qw1.shape[0]
        self.semantic_dim = value_of(params["sem_q_w2"]).shape[1]

    @classmethod
    def create(cls, dim: int, semantic_dim: Optional[int] = None, seed: int = 0) -> "SemanticProjector":
        d_sem = semantic_dim if semantic_dim is not None else max(1, dim // 4)
        rng = RngStream(seed, _SEM_STREAM)
        params = {}
        for side in ("q", "k"):
            params[f"sem_{side}_w1"] = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, d_sem))
            params[f"sem_{side}_b1"] = np.zeros(d_sem)
            params[f"sem_{side}_w2"] = rng.normal(0.0, 1.0 / np.sqrt(d_sem), size=(d_sem, d_sem))
        params["sem_q_b2"] = np.zeros(d_sem)
        return cls(params)

    def _project(self, x, side: str):
        p = self.params
        h = gelu(linear_apply(x, p[f"sem_{side}_w1"], p[f"sem_{side}_b1"]))
        if side == "q":
            return linear_apply(h, p["sem_q_w2"], p["sem_q_b2"])
        return matmul(h, p["sem_k_w2"])

    def project_queries(self, q):
        return self._project(q, "q")

    def project_keys(self, k):
        return self._project(k, "k")


def _check_pair(q, k) -> int:
    qs, ks = value_of(q).shape, value_of(k).shape
    if len(qs) != 2 or len(ks) != 2:
        raise DimensionError("similarity inputs must be 2-D token matrices")
    if qs[0] == 0 or ks[0] == 0:
        raise EmptyInputError("similarity requires at least one query and one key")
    if qs[1] != ks[1]:
        raise DimensionError(f"token dims differ: {qs[1]} vs {ks[1]}")
    return qs[1]


def _scale_dim(cfg: SimilarityConfig, d: int) -> float:
    return float(cfg.head_dim if cfg.head_dim is not None else d)


def pool_queries(tokens: TokenSet) -> TokenSet:
    """Average adjacent non-overlapping pairs; an odd tail passes through.

    Output has ceil(n/2) tokens with pairwise-summed sizes, so total size
    mass is conserved.
    """
    n = len(tokens)
    if n == 0:
        raise EmptyInputError("cannot pool an empty token set")
    x, sizes = tokens.tokens, tokens.sizes
    if n == 1:
        return TokenSet(getitem(x, slice(None)) if isinstance(x, Tensor) else np.array(value_of(x)),
                        sizes=sizes.copy())
    even = n - (n % 2)
    pairs = div(add(getitem(x, slice(0, even, 2)), getitem(x, slice(1, even, 2))), 2.0)
    pooled_sizes = sizes[0:even:2] + sizes[1:even:2]
    if n % 2:
        pairs = concat([pairs, getitem(x, slice(n - 1, n))], axis=0)
        pooled_sizes = np.concatenate([pooled_sizes, sizes[n - 1 :]])
    return TokenSet(pairs, sizes=pooled_sizes)


def euclidean_sim(q, k, cfg: SimilarityConfig) -> SimilarityMatrix:
    """entry(i,j) = exp(-||q_i - k_j||_2 * tau).  Values in (0, 1] for tau > 0."""
    _check_pair(q, k)
    tau = cfg.temperature
    if not _any_tensor(q, k, tau):
        # direct per-pair distances: identical vectors give exactly 0 -> score 1
        dist = cdist(value_of(q), value_of(k), metric="euclidean")
        return SimilarityMatrix(np.exp(-dist * value_of(tau)), "euclidean", row_normalized=False)
    qs = value_of(q).shape
    q3 = reshape(q, (qs[0], 1, qs[1]))
    k3 = reshape(k, (1, value_of(k).shape[0], qs[1]))
    diff = sub(q3, k3)
    dist = sqrt(clamp_min(reduce_sum(mul(diff, diff), axis=2), 0.0))
    return SimilarityMatrix(exp(mul(dist, mul(tau, -1.0))), "euclidean", row_normalized=False)


def cosine_sim(q, k, cfg: SimilarityConfig) -> SimilarityMatrix:
    """entry(i,j) = tau * cos(q_i, k_j); pairs touching a near-zero-norm vector are 0."""
    _check_pair(q, k)
    eps = cfg.zero_norm_eps
    q_norms = np.linalg.norm(value_of(q), axis=1)
    k_norms = np.linalg.norm(value_of(k), axis=1)
    keep = np.outer(q_norms >= eps, k_norms >= eps).astype(np.float64)
    qn = l2_normalize_rows(q, eps=eps)
    kn = l2_normalize_rows(k, eps=eps)
    scores = mul(matmul(qn, transpose(kn)), cfg.temperature)
    if not keep.all():
        scores = mul(scores, keep)
    return SimilarityMatrix(scores, "cosine", row_normalized=False)


def attention_score_sim(q, k, cfg: SimilarityConfig) -> SimilarityMatrix:
    """softmax over keys of tau * q k^T / sqrt(d)."""
    d = _check_pair(q, k)
    scale = div(cfg.temperature, np.sqrt(_scale_dim(cfg, d)))
    logits = mul(matmul(q, transpose(k)), scale)
    return SimilarityMatrix(softmax_rows(logits), "attention_score", row_normalized=True)


def pooled_attention_sim(q, k, cfg: SimilarityConfig) -> SimilarityMatrix:
    """Plain scaled dot-product rows: softmax(q k^T / sqrt(d)), no temperature.

    The pooling itself happens upstream (pool_queries); this scores the
    pooled queries against the full key set.
    """
    d = _check_pair(q, k)
    logits = div(matmul(q, transpose(k)), np.sqrt(_scale_dim(cfg, d)))
    return SimilarityMatrix(softmax_rows(logits), "pooled_attention", row_normalized=True)


def semantic_sim(q, k, projector: SemanticProjector) -> SimilarityMatrix:
    """softmax over keys of f_q(q) f_k(k)^T / sqrt(d_sem)."""
    d = _check_pair(q, k)
    if d != projector.dim:
        raise DimensionError(f"projector expects dim {projector.dim}, tokens have {d}")
    fq = projector.project_queries(q)
    fk = projector.project_keys(k)
    logits = div(matmul(fq, transpose(fk)), np.sqrt(float(projector.semantic_dim)))
    return SimilarityMatrix(softmax_rows(logits), "semantic", row_normalized=True)


def tome_partition(n: int):
    """Alternate-index split: even sequence positions form A, odd form B."""
    if n < 2:
        raise MergeNotApplicable("bipartite matching needs at least 2 tokens")
    idx = np.arange(n)
    return idx[0::2], idx[1::2]


def tome_sim(tokens: TokenSet):
    """Bipartite similarity: cosine between partitions, softmax over B.

    Returns (a_indices, b_indices, SimilarityMatrix).
    """
    a_idx, b_idx = tome_partition(len(tokens))
    cfg = SimilarityConfig(method="cosine", temperature=1.0)
    raw = cosine_sim(tokens.values[a_idx], tokens.values[b_idx], cfg)
    return a_idx, b_idx, SimilarityMatrix(softmax_rows(raw.scores), "tome", row_normalized=True)


def compute_similarity(q, k, cfg: SimilarityConfig,
                       projector: Optional[SemanticProjector] = None) -> SimilarityMatrix:
    """Dispatch on cfg.method for query/key cross-similarity.

    The tome method partitions a single token set and cannot score an
    arbitrary (q, k) pair; callers route it through tome_sim/tome_merge.
    """
    if cfg.method == "euclidean":
        return euclidean_sim(q, k, cfg)
    if cfg.method == "cosine":
        return cosine_sim(q, k, cfg)
    if cfg.method == "attention_score":
        return attention_score_sim(q, k, cfg)
    if cfg.method == "pooled_attention":
        return pooled_attention_sim(q, k, cfg)
    if cfg.method == "semantic":
        if projector is None:
            raise ConfigError("semantic method requires a SemanticProjector")
        return semantic_sim(q, k, projector)
    raise ConfigError(f"method {cfg.method!r} is not a query/key similarity")
