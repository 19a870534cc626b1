"""End-to-end experiment harness: encode, train, evaluate, ablate, bench.

Every run is a pure function of (images, labels, splits, config, settings):
shuffling, fuzzy-position draws, and weight init all derive from the config
seed, so analytic outputs are bit-reproducible.  PATHOHR_THREADS caps how
many ablation cells run concurrently (cells are independent).
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .aggregation import mse_loss, one_hot, train_step
from .autodiff import flatten_arrays, grad_check, unflatten_arrays, value_of
from .encoder import EncoderParams, encode_grid
from .errors import UndefinedMetric
from .merge import MergeConfig
from .metrics import MetricsReport, classification_metrics, roc_auc
from .model import ModelConfig, count_attention_macs, init_params, multi_query_attention, pathohr_forward
from .patches import build_tissue_mask, extract_patches, histogram_256, otsu_threshold
from .rng import RngStream
from .similarity import METHODS
from .tokens import TokenSet

_TRAIN_STREAM = 0x7E40
_FPE_STREAM = 0xFE
_BENCH_STREAM = 0xBE
ABLATION_CSV_HEADER = "method,residual,auc,acc,f1,recall,precision,mac_ratio"


@dataclass
class TrainSettings:
    epochs: int = 6
    learning_rate: float = 1e-3
    momentum: float = 0.9
    patch_size: int = 16
    min_tissue: float = 0.5
    encoder_hidden: int = 128


def thread_budget() -> int:
    try:
        return max(1, int(os.environ.get("PATHOHR_THREADS", "1")))
    except ValueError:
        return 1


def encode_slide(image: np.ndarray, patch_size: int, enc_params: EncoderParams,
                 min_tissue: float = 0.5) -> TokenSet:
    """Otsu -> tissue mask -> tile -> embed.  Falls back to all full tiles
    when masking leaves nothing (keeps degenerate slides usable)."""
    otsu = otsu_threshold(histogram_256(image))
    mask = build_tissue_mask(image, otsu)
    grid = extract_patches(image, mask, patch_size, min_tissue_fraction=min_tissue)
    if len(grid) == 0:
        grid = extract_patches(image, np.ones_like(mask), patch_size, min_tissue_fraction=0.0)
    return encode_grid(grid, enc_params)


def prepare_tokens(images: Sequence[np.ndarray], cfg: ModelConfig,
                   settings: TrainSettings) -> List[TokenSet]:
    enc = EncoderParams.for_patch_size(cfg.seed, settings.patch_size,
                                       hidden_dim=settings.encoder_hidden, out_dim=cfg.d)
    return [encode_slide(img, settings.patch_size, enc, settings.min_tissue) for img in images]


def _model_loss(tensors: dict, batch: dict):
    logits, _ = pathohr_forward(batch["tokens"], batch["cfg"], tensors,
                                rng=batch["rng"], train_mode=True)
    return mse_loss(logits, batch["target"])


def _score_slides(token_sets: List[TokenSet], idx: np.ndarray, cfg: ModelConfig,
                  params: dict) -> Tuple[np.ndarray, np.ndarray, float]:
    """Inference pass over idx: (scores, argmax predictions, mean MAC ratio)."""
    scores, preds, ratios = [], [], []
    for i in idx:
        logits, diag = pathohr_forward(token_sets[i], cfg, params)
        vec = value_of(logits)
        scores.append(float(vec[1] - vec[0]))
        preds.append(int(np.argmax(vec)))
        ratios.append(diag["mac_ratio"])
    return np.array(scores), np.array(preds), float(np.mean(ratios))


def run_experiment(images: Sequence[np.ndarray], labels: np.ndarray,
                   splits: Dict[str, np.ndarray], cfg: ModelConfig,
                   settings: Optional[TrainSettings] = None
                   ) -> Tuple[MetricsReport, List[dict], dict]:
    """Train on the train split, select on validation AUC, report on test.

    Returns (report, per-epoch loss curve rows, best parameters).
    """
    settings = settings or TrainSettings()
    token_sets = prepare_tokens(images, cfg, settings)
    params = init_params(cfg)
    best_params = {k: v.copy() for k, v in params.items()}
    best_auc = -1.0
    velocity = None
    fpe_base = RngStream(cfg.seed, _FPE_STREAM)
    shuffle_base = RngStream(cfg.seed, _TRAIN_STREAM)
    train_idx, val_idx = splits["train"], splits["val"]
    curve = []
    step = 0
    for epoch in range(settings.epochs):
        order = train_idx[shuffle_base.child(epoch).permutation(len(train_idx))]
        losses = []
        for i in order:
            batch = {"tokens": token_sets[i], "target": one_hot(labels[i]),
                     "cfg": cfg, "rng": fpe_base.child(step)}
            params, loss, velocity = train_step(params, batch, _model_loss,
                                                settings.learning_rate,
                                                settings.momentum, velocity)
            losses.append(loss)
            step += 1
        val_scores, _, _ = _score_slides(token_sets, val_idx, cfg, params)
        val_auc = roc_auc(val_scores, labels[val_idx])
        if val_auc > best_auc:
            best_auc = val_auc
            best_params = {k: v.copy() for k, v in params.items()}
        curve.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                      "val_auc": val_auc})

    test_idx = splits["test"]
    scores, preds, mac_ratio = _score_slides(token_sets, test_idx, cfg, best_params)
    auc = roc_auc(scores, labels[test_idx])
    acc, f1, recall, precision = classification_metrics(preds, labels[test_idx])
    m_acc, m_f1, m_recall, m_precision = classification_metrics(preds, labels[test_idx],
                                                                average="macro")
    report = MetricsReport(
        auc=auc, acc=acc, f1=f1, recall=recall, precision=precision,
        attention_mac_ratio=mac_ratio,
        config={
            "model": cfg.to_json_dict(),
            "train": asdict(settings),
            "macro": {"acc": m_acc, "f1": m_f1, "recall": m_recall, "precision": m_precision},
            "val_auc": best_auc,
        },
    )
    return report, curve, best_params


def ablation_harness(images: Sequence[np.ndarray], labels: np.ndarray,
                     splits: Dict[str, np.ndarray], base_cfg: ModelConfig,
                     settings: Optional[TrainSettings] = None,
                     methods: Sequence[str] = METHODS,
                     residuals: Sequence[bool] = (True, False)) -> List[dict]:
    """One row per (method, residual) cell with shared data, splits, seed.

    A failing cell is marked rather than aborting the grid.  Rows come back
    in grid order regardless of scheduling.
    """
    cells = [(m, r) for m in methods for r in residuals]

    def run_cell(cell):
        method, residual = cell
        doc = base_cfg.to_json_dict()
        doc["similarity_method"] = method
        doc["residual"] = residual
        try:
            report, _, _ = run_experiment(images, labels, splits,
                                          ModelConfig.from_json_dict(doc), settings)
            return {"method": method, "residual": residual, "status": "ok",
                    "auc": report.auc, "acc": report.acc, "f1": report.f1,
                    "recall": report.recall, "precision": report.precision,
                    "mac_ratio": report.attention_mac_ratio,
                    "macro": report.config["macro"]}
        except Exception as exc:  # a diverged cell must not sink the grid
            return {"method": method, "residual": residual, "status": "failed",
                    "error": f"{type(exc).__name__}: {exc}",
                    "auc": float("nan"), "acc": float("nan"), "f1": float("nan"),
                    "recall": float("nan"), "precision": float("nan"),
                    "mac_ratio": float("nan")}

    workers = thread_budget()
    if workers == 1:
        return [run_cell(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_cell, cells))


def ablation_csv_lines(rows: List[dict]) -> List[str]:
    """Render harness rows as the fixed-header ablation CSV."""
    lines = [ABLATION_CSV_HEADER]
    for row in rows:
        cols = [row["method"], str(row["residual"]).lower()]
        cols += [repr(float(row[k])) for k in ("auc", "acc", "f1", "recall", "precision", "mac_ratio")]
        lines.append(",".join(cols))
    return lines


def bench_report(d: int = 64, heads: int = 4, sizes: Sequence[int] = (256, 1024, 4096)) -> List[dict]:
    """Analytic MAC counts plus measured attention wall time, unmerged vs
    merged to half the tokens.  MAC columns are deterministic; wall times
    are whatever the clock says."""
    cfg = ModelConfig(d=d, heads=heads, pe_rows=2, pe_cols=2)
    params = init_params(cfg)
    rng = RngStream(0, _BENCH_STREAM)
    rows = []
    for n in sizes:
        tokens = TokenSet(rng.normal(0.0, 1.0, size=(n, d)))
        merged = TokenSet(rng.normal(0.0, 1.0, size=(n // 2, d)))

        def timed(ts: TokenSet) -> float:
            t0 = time.perf_counter()
            multi_query_attention(ts, params, prefix="loop_mqa")
            return time.perf_counter() - t0

        rows.append({
            "n": n,
            "macs_unmerged": count_attention_macs(n, d, heads),
            "macs_merged": count_attention_macs(n // 2, d, heads),
            "mac_ratio": count_attention_macs(n // 2, d, heads) / count_attention_macs(n, d, heads),
            "wall_s_unmerged": timed(tokens),
            "wall_s_merged": timed(merged),
        })
    return rows


def bench_csv_lines(rows: List[dict]) -> List[str]:
    lines = ["n,macs_unmerged,macs_merged,mac_ratio,wall_s_unmerged,wall_s_merged"]
    for r in rows:
        lines.append(",".join([
            str(r["n"]), str(r["macs_unmerged"]), str(r["macs_merged"]),
            repr(float(r["mac_ratio"])), repr(float(r["wall_s_unmerged"])),
            repr(float(r["wall_s_merged"])),
        ]))
    return lines


def pipeline_grad_check(method: str = "attention_score", n_tokens: int = 5,
                        d: int = 8, seed: int = 0, h: float = 1e-4,
                        merge_placement: str = "post_loop", j_iters: int = 1) -> float:
    """Max relative error between reverse-mode and central-difference
    gradients of the slide MSE at a small desk-scale config.

    The check runs at an O(1) random point rather than the tiny-scale
    init: near init the true gradients are ~1e-6, which drowns central
    differences in evaluation roundoff regardless of autodiff correctness.
    The merge threshold sits far below every attainable score so the
    sparsification mask cannot flip inside the +/-h stencil.
    """
    cfg = ModelConfig(d=d, N=1, J=j_iters, heads=2, similarity_method=method,
                      merge_config=MergeConfig(target_tokens=2, merge_threshold=-10.0),
                      merge_placement=merge_placement, residual=True, seed=seed,
                      fpe=False, pe_rows=6, pe_cols=6)
    params = init_params(cfg)
    rng = RngStream(seed, 0xC8EC)
    tokens = TokenSet(rng.normal(0.0, 1.0, size=(n_tokens, d)),
                      positions=np.stack([np.arange(n_tokens) % 4,
                                          np.arange(n_tokens) // 4], axis=1))
    target = one_hot(1)
    flat, spec = flatten_arrays(params)
    point = flat + rng.normal(0.0, 0.25, size=flat.shape)

    def f(vec):
        p = unflatten_arrays(vec, spec)
        logits, _ = pathohr_forward(tokens, cfg, p)
        return mse_loss(logits, target)

    return grad_check(f, point, h=h)
