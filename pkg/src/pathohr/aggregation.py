"""Slide-level aggregation: gated attention pooling over patch features.

Per-patch features pass through a pre-attention MLP, receive gated
attention scores (tanh path times sigmoid path), and are pooled by the
softmax of those scores into one slide embedding, which a linear head
turns into logits.  Training minimizes MSE against one-hot targets with
momentum SGD.
"""

from __future__ import annotations

from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    gelu,
    layer_norm,
    linear_apply,
    matmul,
    mul,
    reduce_mean,
    reshape,
    sigmoid,
    softmax_rows,
    sub,
    tanh,
    transpose,
    value_of,
)
from .errors import DimensionError, EmptyInputError, TrainingDiverged
from .rng import RngStream
from .tokens import TokenSet

_GATE_STREAM = 0xA66


def create_gated_params(seed: int, in_dim: int, embed_dim: int = 64,
                        attn_dim: int = 32, n_classes: int = 2) -> dict:
    """Weights for pre-attention MLP, both gate paths, scorer, and head."""
    rng = RngStream(seed, _GATE_STREAM)
    s = 0.02
    return {
        "pre_w1": rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, embed_dim)),
        "pre_b1": np.zeros(embed_dim),
        "pre_ln_gain": np.ones(embed_dim),
        "pre_ln_bias": np.zeros(embed_dim),
        "pre_w2": rng.normal(0.0, 1.0 / np.sqrt(embed_dim), size=(embed_dim, embed_dim)),
        "pre_b2": np.zeros(embed_dim),
        "attn_v": rng.normal(0.0, s, size=(embed_dim, attn_dim)),
        "attn_u": rng.normal(0.0, s, size=(embed_dim, attn_dim)),
        "attn_w": rng.normal(0.0, s, size=(attn_dim, 1)),
        "agg_head_w": rng.normal(0.0, s, size=(embed_dim, n_classes)),
        "agg_head_b": np.zeros(n_classes),
    }


def pre_attention(features: TokenSet, params: dict) -> TokenSet:
    """Per-token linear -> layer norm -> GELU -> linear; count unchanged."""
    x = features.tokens
    h = linear_apply(x, params["pre_w1"], params["pre_b1"])
    h = layer_norm(h, params["pre_ln_gain"], params["pre_ln_bias"])
    h = gelu(h)
    out = linear_apply(h, params["pre_w2"], params["pre_b2"])
    return TokenSet(out, sizes=features.sizes.copy(), positions=features.positions)


def gated_attention_weights(features: TokenSet, params: dict):
    """Softmax attention weights from tanh(W_v x) * sigmoid(W_u x) scores."""
    n = len(features)
    if n == 0:
        raise EmptyInputError("gated attention needs at least one token")
    x = features.tokens
    a = tanh(matmul(x, params["attn_v"]))
    g = sigmoid(matmul(x, params["attn_u"]))
    scores = matmul(mul(a, g), params["attn_w"])  # (n, 1)
    weights = softmax_rows(transpose(scores))     # (1, n)
    return reshape(weights, (n,))


def slide_embedding(features: TokenSet, weights):
    """Convex combination sum_i w_i x_i of the token features."""
    n = len(features)
    if value_of(weights).shape != (n,):
        raise DimensionError(f"need {n} weights, got {value_of(weights).shape}")
    total = float(np.sum(value_of(weights)))
    if not np.isclose(total, 1.0, atol=1e-6):
        raise DimensionError(f"weights must sum to 1, got {total}")
    pooled = matmul(reshape(weights, (1, n)), features.tokens)
    return reshape(pooled, (features.dim,))


def aggregate_and_predict(features: TokenSet, params: dict):
    """Full head: pre-attention, gated pooling, linear logits."""
    pre = pre_attention(features, params)
    weights = gated_attention_weights(pre, params)
    embedding = slide_embedding(pre, weights)
    embed_dim = value_of(pre.tokens).shape[1]
    n_classes = value_of(params["agg_head_b"]).shape[0]
    logits = linear_apply(reshape(embedding, (1, embed_dim)),
                          params["agg_head_w"], params["agg_head_b"])
    return reshape(logits, (n_classes,))


def mse_loss(pred, target):
    """Mean of squared differences between two equal-length vectors."""
    p, t = value_of(pred), value_of(target)
    if p.shape != t.shape:
        raise DimensionError(f"loss shapes differ: {p.shape} vs {t.shape}")
    diff = sub(pred, target)
    return reduce_mean(mul(diff, diff))


def one_hot(label: int, n_classes: int = 2) -> np.ndarray:
    out = np.zeros(n_classes)
    out[int(label)] = 1.0
    return out


def train_step(params: Dict[str, np.ndarray], batch,
               loss_fn: Callable, learning_rate: float = 1e-3,
               momentum: float = 0.9,
               velocity: Optional[Dict[str, np.ndarray]] = None
               ) -> Tuple[Dict[str, np.ndarray], float, Dict[str, np.ndarray]]:
    """One momentum-SGD update of `params` against loss_fn(tensors, batch).

    Records the loss on a fresh tape, backpropagates, and applies
    v = momentum*v - lr*grad; p += v.  Returns (new params, pre-update
    loss, velocity).  A non-finite loss raises TrainingDiverged; a zero
    learning rate is a legal no-op update (loss still reported).
    """
    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    tape = Tape()
    tensors = {name: Tensor(np.asarray(arr, dtype=np.float64), tape) for name, arr in params.items()}
    loss = loss_fn(tensors, batch)
    loss_value = float(value_of(loss))
    if not np.isfinite(loss_value):
        raise TrainingDiverged(f"loss is not finite: {loss_value}")
    tape.backward(loss)
    if velocity is None:
        velocity = {name: np.zeros_like(value_of(arr), dtype=np.float64) for name, arr in params.items()}
    new_params = {}
    for name, tensor in tensors.items():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.all(np.isfinite(grad)):
            raise TrainingDiverged(f"gradient of {name!r} is not finite")
        velocity[name] = momentum * velocity[name] - learning_rate * grad
        new_params[name] = tensor.data + velocity[name]
    return new_params, loss_value, velocity
