"""Transformer encoder pipeline over patch tokens.

Forward structure: prepend a CLS token, add (optionally fuzzy) positional
encodings, run J outer iterations of {shared layer norm, multi-query
attention residual, linear residual, N pre-norm encoder blocks}, project
tokens to Q/K, merge patch tokens by similarity (the CLS token is exempt
and always survives), and read 2 logits off the CLS state.

All weights live in a flat name->array dict so the training loop can lift
them onto a gradient tape; the same forward code serves both paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace
from typing import Optional

import numpy as np

from .autodiff import (
    concat,
    gelu,
    getitem,
    layer_norm,
    linear_apply,
    matmul,
    mul,
    reshape,
    softmax_rows,
    transpose,
    value_of,
)
from .errors import ConfigError, DimensionError, EmptyInputError, MergeNotApplicable
from .merge import MergeConfig, PositionalEncoding, fuzzy_positional_encoding, merge_tokens
from .rng import RngStream
from .similarity import METHODS, SemanticProjector, SimilarityConfig
from .tokens import TokenSet

_PARAM_STREAM = 0x30D
_TABLE_CHILD = 7
_PLACEMENTS = ("post_loop", "per_iteration")


@dataclass
class ModelConfig:
    """Pipeline hyperparameters; round-trips through a JSON dict.

    `residual` is the merge residual axis ablated in experiments; it is
    mirrored into `merge_config`, whose mode likewise follows the chosen
    similarity method (tome routes to bipartite merging).
    """

    d: int = 32
    N: int = 1
    J: int = 1
    heads: int = 4
    similarity_method: str = "attention_score"
    merge_config: MergeConfig = field(default_factory=MergeConfig)
    merge_placement: str = "post_loop"
    residual: bool = True
    seed: int = 0
    fpe: bool = True
    pe_rows: int = 40
    pe_cols: int = 40
    temperature_init: float = 1.0
    semantic_dim: Optional[int] = None

    def __post_init__(self):
        if self.d < 1 or self.N < 1 or self.J < 1 or self.heads < 1:
            raise ConfigError("d, N, J, heads must all be >= 1")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.similarity_method not in METHODS:
            raise ConfigError(f"unknown similarity method {self.similarity_method!r}")
        if self.merge_placement not in _PLACEMENTS:
            raise ConfigError(f"merge_placement must be one of {_PLACEMENTS}")
        if isinstance(self.merge_config, dict):
            self.merge_config = MergeConfig(**self.merge_config)
        self.merge_config = replace(
            self.merge_config,
            residual=self.residual,
            mode="tome" if self.similarity_method == "tome" else "atm",
        )

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["merge_config"] = asdict(self.merge_config)
        return out

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


def init_params(cfg: ModelConfig) -> dict:
    """Deterministic weight initialization from cfg.seed."""
    rng = RngStream(cfg.seed, _PARAM_STREAM)
    d, dh = cfg.d, cfg.d // cfg.heads
    scale = 0.02
    params = {"cls": rng.normal(0.0, scale, size=(1, d))}

    def init_mqa(prefix: str):
        params[f"{prefix}_wq"] = rng.normal(0.0, scale, size=(d, d))
        params[f"{prefix}_bq"] = np.zeros(d)
        # no key bias: it shifts every score in a softmax row by the same
        # constant, so it can never influence the output
        params[f"{prefix}_wk"] = rng.normal(0.0, scale, size=(d, dh))
        params[f"{prefix}_wv"] = rng.normal(0.0, scale, size=(d, dh))
        params[f"{prefix}_bv"] = np.zeros(dh)
        params[f"{prefix}_wo"] = rng.normal(0.0, scale, size=(d, d))
        params[f"{prefix}_bo"] = np.zeros(d)

    params["loop_ln_gain"] = np.ones(d)
    params["loop_ln_bias"] = np.zeros(d)
    init_mqa("loop_mqa")
    params["loop_lin_w"] = rng.normal(0.0, scale, size=(d, d))
    params["loop_lin_b"] = np.zeros(d)
    for i in range(cfg.N):
        params[f"blk{i}_ln1_gain"] = np.ones(d)
        params[f"blk{i}_ln1_bias"] = np.zeros(d)
        init_mqa(f"blk{i}_mqa")
        params[f"blk{i}_ln2_gain"] = np.ones(d)
        params[f"blk{i}_ln2_bias"] = np.zeros(d)
        params[f"blk{i}_ffn_w1"] = rng.normal(0.0, scale, size=(d, 4 * d))
        params[f"blk{i}_ffn_b1"] = np.zeros(4 * d)
        params[f"blk{i}_ffn_w2"] = rng.normal(0.0, scale, size=(4 * d, d))
        params[f"blk{i}_ffn_b2"] = np.zeros(d)
    # bias-free linear maps: a key-side bias is invisible through the
    # softmax-normalized similarity methods (dead parameter)
    params["proj_q_w"] = rng.normal(0.0, scale, size=(d, d))
    params["proj_k_w"] = rng.normal(0.0, scale, size=(d, d))
    params["head_w"] = rng.normal(0.0, scale, size=(d, 2))
    params["head_b"] = np.zeros(2)
    params["temperature"] = np.asarray(float(cfg.temperature_init))
    table_rng = RngStream(cfg.seed, _PARAM_STREAM).child(_TABLE_CHILD)
    params["pos_table"] = table_rng.normal(0.0, scale, size=(cfg.pe_rows, cfg.pe_cols, cfg.d))
    if cfg.similarity_method == "semantic":
        params.update(SemanticProjector.create(d, cfg.semantic_dim, seed=cfg.seed).params)
    return params


def multi_query_attention(tokens: TokenSet, params: dict, prefix: str = "loop_mqa") -> TokenSet:
    """Attention where every query head shares one key/value projection.

    Head count is implied by the shapes: heads = d / wk.shape[1].
    """
    x = tokens.tokens
    wq = params[f"{prefix}_wq"]
    wk = params[f"{prefix}_wk"]
    d = value_of(wq).shape[0]
    dh = value_of(wk).shape[1]
    if value_of(x).shape[1] != d:
        raise DimensionError(f"token dim {value_of(x).shape[1]} does not match weights ({d})")
    if d % dh:
        raise DimensionError(f"key dim {dh} does not divide model dim {d}")
    heads = d // dh
    q = linear_apply(x, wq, params[f"{prefix}_bq"])
    k = matmul(x, wk)
    v = linear_apply(x, params[f"{prefix}_wv"], params[f"{prefix}_bv"])
    kt = transpose(k)
    scale = 1.0 / np.sqrt(dh)
    heads_out = []
    for h in range(heads):
        qh = getitem(q, (slice(None), slice(h * dh, (h + 1) * dh)))
        attn = softmax_rows(mul(matmul(qh, kt), scale))
        heads_out.append(matmul(attn, v))
    out = concat(heads_out, axis=1)
    out = linear_apply(out, params[f"{prefix}_wo"], params[f"{prefix}_bo"])
    return TokenSet(out, sizes=tokens.sizes.copy(), positions=tokens.positions)


def encoder_block(tokens: TokenSet, params: dict, index: int = 0) -> TokenSet:
    """Pre-norm block: x + MQA(LN(x)), then x + FFN(LN(x)) with a GELU FFN
    of expansion 4."""
    p = f"blk{index}"
    x = tokens.tokens
    norm1 = layer_norm(x, params[f"{p}_ln1_gain"], params[f"{p}_ln1_bias"])
    attn = multi_query_attention(TokenSet(norm1, sizes=tokens.sizes), params, prefix=f"{p}_mqa")
    x = x + attn.tokens
    norm2 = layer_norm(x, params[f"{p}_ln2_gain"], params[f"{p}_ln2_bias"])
    hidden = gelu(linear_apply(norm2, params[f"{p}_ffn_w1"], params[f"{p}_ffn_b1"]))
    x = x + linear_apply(hidden, params[f"{p}_ffn_w2"], params[f"{p}_ffn_b2"])
    return TokenSet(x, sizes=tokens.sizes.copy(), positions=tokens.positions)


def projection_head(tokens: TokenSet, params: dict):
    """Two independent linear maps producing the similarity Q and K."""
    x = tokens.tokens
    q = matmul(x, params["proj_q_w"])
    k = matmul(x, params["proj_k_w"])
    return q, k


def count_attention_macs(n: int, d: int, h: int) -> int:
    """Exact multiply-accumulate count of one multi-query attention pass.

    Counts the Q/K/V/output projections plus score and value mixing for n
    tokens at model dim d with h query heads sharing one (d/h)-dim K/V.
    """
    if d < 1 or h < 1 or d % h:
        raise ConfigError(f"invalid attention geometry d={d}, h={h}")
    if n <= 0:
        return 0
    dh = d // h
    projections = 2 * n * d * d + 2 * n * d * dh
    scores = h * n * n * dh
    values = h * n * n * dh
    return projections + scores + values


def attention_mac_breakdown(n: int, d: int, h: int) -> dict:
    dh = d // h
    if n <= 0:
        return {"projections": 0, "scores": 0, "values": 0, "total": 0}
    breakdown = {
        "projections": 2 * n * d * d + 2 * n * d * dh,
        "scores": h * n * n * dh,
        "values": h * n * n * dh,
    }
    breakdown["total"] = sum(breakdown.values())
    return breakdown


def classify(logits) -> int:
    """Predicted class index (argmax; ties resolve to the lower index)."""
    return int(np.argmax(value_of(logits)))


def pathohr_forward(embeddings: TokenSet, cfg: ModelConfig, params: dict,
                    rng: Optional[RngStream] = None, train_mode: bool = False):
    """Run the full pipeline on one slide's patch tokens.

    Returns (logits, diagnostics): a length-2 logits vector and a dict with
    patch-token counts before/after merging, merge rounds, and analytic
    attention MAC counts at both sizes.
    """
    n0 = len(embeddings)
    if n0 == 0:
        raise EmptyInputError("forward pass needs at least one patch token")
    if embeddings.dim != cfg.d:
        raise DimensionError(f"embeddings have dim {embeddings.dim}, model expects {cfg.d}")

    x = embeddings.tokens
    if embeddings.positions is not None:
        mode = "train" if (train_mode and cfg.fpe) else "inference"
        pe = PositionalEncoding(params["pos_table"], mode=mode)
        x = x + fuzzy_positional_encoding(pe, embeddings.positions, rng)

    tokens_mat = concat([params["cls"], x], axis=0)
    sizes = np.concatenate([np.ones(1, dtype=np.int64), embeddings.sizes])

    sim_cfg = SimilarityConfig(method=cfg.similarity_method,
                               temperature=params["temperature"])
    projector = SemanticProjector(params) if cfg.similarity_method == "semantic" else None

    def apply_merge(mat, szs):
        # CLS (row 0) is exempt from merging and always survives
        patch = TokenSet(getitem(mat, slice(1, None)), sizes=szs[1:])
        try:
            res = merge_tokens(
                patch, cfg.merge_config, sim_cfg, projector,
                project_q=lambda t: matmul(t, params["proj_q_w"]),
                project_k=lambda t: matmul(t, params["proj_k_w"]),
            )
        except MergeNotApplicable:
            return mat, szs, 0
        merged = concat([getitem(mat, slice(0, 1)), res.tokens.tokens], axis=0)
        return merged, np.concatenate([np.ones(1, dtype=np.int64), res.tokens.sizes]), res.rounds

    rounds = 0
    for _ in range(cfg.J):
        norm = layer_norm(tokens_mat, params["loop_ln_gain"], params["loop_ln_bias"])
        mqa = multi_query_attention(TokenSet(norm, sizes=sizes), params, prefix="loop_mqa")
        tokens_mat = tokens_mat + mqa.tokens
        tokens_mat = tokens_mat + linear_apply(norm, params["loop_lin_w"], params["loop_lin_b"])
        for i in range(cfg.N):
            blk = encoder_block(TokenSet(tokens_mat, sizes=sizes), params, index=i)
            tokens_mat = blk.tokens
        if cfg.merge_placement == "per_iteration":
            tokens_mat, sizes, r = apply_merge(tokens_mat, sizes)
            rounds += r
    if cfg.merge_placement == "post_loop":
        tokens_mat, sizes, r = apply_merge(tokens_mat, sizes)
        rounds += r

    cls_state = getitem(tokens_mat, slice(0, 1))
    logits = reshape(linear_apply(cls_state, params["head_w"], params["head_b"]), (2,))

    n_out = len(sizes) - 1
    macs_in = count_attention_macs(n0 + 1, cfg.d, cfg.heads)
    macs_out = count_attention_macs(n_out + 1, cfg.d, cfg.heads)
    diagnostics = {
        "patch_tokens_in": n0,
        "patch_tokens_out": n_out,
        "merge_rounds": rounds,
        "macs_unmerged": macs_in,
        "macs_merged": macs_out,
        "mac_ratio": macs_out / macs_in,
    }
    return logits, diagnostics
