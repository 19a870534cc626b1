"""Evaluation metrics and deterministic dataset splitting.

roc_auc is the Mann-Whitney statistic (ties credited 0.5), computed by the
rank-sum identity so the value agrees exactly with pairwise enumeration.
Classification metrics follow the positive-class binary convention with
0/0 defined as 0; a macro average is available for comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Dict, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionError, UndefinedMetric
from .rng import RngStream

_SPLIT_STREAM = 0x5B117


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative.

    Equals the fraction of (positive, negative) pairs ordered correctly,
    with tied scores credited 0.5.  Requires both classes present.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise DimensionError("scores and labels must be equal-length vectors")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs at least one positive and one negative label")
    ranks = rankdata(s)  # average ranks, so ties contribute exactly 0.5
    rank_sum = float(np.sum(ranks[y == 1]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def classification_metrics(predictions, labels, average: str = "binary"
                           ) -> Tuple[float, float, float, float]:
    """(accuracy, f1, recall, precision) for binary predictions.

    `binary` scores the positive class with the 0/0 -> 0 convention;
    `macro` averages both classes' scores.
    """
    p = np.asarray(predictions).astype(np.int64)
    y = np.asarray(labels).astype(np.int64)
    if p.shape != y.shape or p.ndim != 1 or p.size == 0:
        raise DimensionError("predictions and labels must be equal-length non-empty vectors")
    if average not in ("binary", "macro"):
        raise ValueError(f"average must be 'binary' or 'macro', got {average!r}")
    acc = float(np.mean(p == y))

    def prf(positive: int):
        tp = int(np.sum((p == positive) & (y == positive)))
        fp = int(np.sum((p == positive) & (y != positive)))
        fn = int(np.sum((p != positive) & (y == positive)))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return f1, recall, precision

    if average == "binary":
        f1, recall, precision = prf(1)
    else:
        per_class = [prf(0), prf(1)]
        f1, recall, precision = (float(np.mean([c[i] for c in per_class])) for i in range(3))
    return acc, f1, recall, precision


@dataclass
class MetricsReport:
    """One experiment's scores plus the config that produced them."""

    auc: float
    acc: float
    f1: float
    recall: float
    precision: float
    attention_mac_ratio: float = 1.0
    config: Dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("auc", "acc", "f1", "recall", "precision"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def split_indices(n: int, seed: int) -> Dict[str, np.ndarray]:
    """Deterministic train/val/test split by seeded shuffle, ratio 8:1:1.

    Validation and test each take floor(n/10) items (at least 1); the rest
    train.  n=100 gives 80/10/10, n=10 gives 8/1/1.
    """
    if n < 10:
        raise ValueError("need at least 10 items for an 8:1:1 split")
    rng = RngStream(seed, _SPLIT_STREAM)
    perm = rng.permutation(n)
    n_val = max(1, n // 10)
    n_test = max(1, n // 10)
    return {
        "test": np.sort(perm[:n_test]),
        "val": np.sort(perm[n_test:n_test + n_val]),
        "train": np.sort(perm[n_test + n_val:]),
    }
