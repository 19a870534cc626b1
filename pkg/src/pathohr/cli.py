"""Command-line front end for the pipeline.

Subcommands: gen-data, run, ablate, bench, grad-check.  Every command
echoes its resolved configuration into its output files, so any analytic
column can be reproduced bit-exactly from the artifacts alone.

Exit codes: 0 success, 1 usage error, 2 missing input, 3 numeric
divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from .errors import ConfigError, FormatError, NumericError, PathoHRError, TrainingDiverged, UndefinedMetric
from .formats import write_checkpoint
from .harness import (
    TrainSettings,
    ablation_csv_lines,
    ablation_harness,
    bench_csv_lines,
    bench_report,
    pipeline_grad_check,
    run_experiment,
)
from .merge import MergeConfig
from .model import ModelConfig
from .similarity import METHODS
from .synthetic import gen_dataset, load_dataset, write_dataset

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING_INPUT = 2
EXIT_DIVERGED = 3

GRAD_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this laboratory reserves 2 for
    missing inputs, so usage failures are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_model_flags(p: argparse.ArgumentParser, placement_default: str = "post_loop"):
    p.add_argument("--method", choices=METHODS, default="cosine",
                   help="similarity method driving the merge")
    p.add_argument("--dim", type=int, default=32, help="token dimension d")
    p.add_argument("--heads", type=int, default=4, help="query heads (shared K/V)")
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--tau-merge", type=float, default=0.0,
                   help="merge threshold; scores below it are dropped")
    p.add_argument("--temperature", type=float, default=1.0,
                   help="initial similarity temperature")
    p.add_argument("--n-blocks", type=int, default=1, help="encoder blocks N")
    p.add_argument("--j-iters", type=int, default=2, help="outer iterations J")
    p.add_argument("--target-tokens", type=int, default=8,
                   help="merge until at most this many patch tokens")
    p.add_argument("--residual", action=argparse.BooleanOptionalAction, default=True,
                   help="add pooled tokens back after merging")
    p.add_argument("--merge-placement", choices=("post_loop", "per_iteration"),
                   default=placement_default)
    p.add_argument("--fpe", choices=("on", "off"), default="on",
                   help="fuzz positional lookups during training")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--lr", type=float, default=1e-3)


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        d=args.dim, N=args.n_blocks, J=args.j_iters, heads=args.heads,
        similarity_method=args.method,
        merge_config=MergeConfig(merge_threshold=args.tau_merge,
                                 target_tokens=args.target_tokens),
        merge_placement=args.merge_placement, residual=args.residual,
        seed=args.seed, fpe=args.fpe == "on",
        temperature_init=args.temperature,
    )


def _train_settings(args) -> TrainSettings:
    return TrainSettings(epochs=args.epochs, learning_rate=args.lr,
                         patch_size=args.patch_size)


def _load_or_exit(data_dir: str):
    manifest = os.path.join(data_dir, "manifest.csv")
    if not os.path.isfile(manifest):
        raise FileNotFoundError(f"no dataset manifest at {manifest} (run gen-data first)")
    return load_dataset(data_dir)


def _write_json(path: str, doc) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _write_lines(path: str, lines) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_gen_data(args) -> int:
    slides, splits = gen_dataset(args.n_slides, args.balance, args.seed,
                                 width=args.width, height=args.height,
                                 signal_fraction=args.signal_fraction,
                                 patch_size=args.patch_size)
    manifest = write_dataset(slides, splits, args.out_dir, extra_config={
        "n_slides": args.n_slides, "balance": args.balance, "seed": args.seed,
        "width": args.width, "height": args.height,
        "signal_fraction": args.signal_fraction, "patch_size": args.patch_size,
    })
    print(f"wrote {len(slides)} slides and {manifest}")
    return EXIT_OK


def cmd_run(args) -> int:
    images, labels, splits = _load_or_exit(args.data_dir)
    cfg = _model_config(args)
    settings = _train_settings(args)
    report, curve, params = run_experiment(images, labels, splits, cfg, settings)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_json(os.path.join(args.out_dir, "metrics.json"), asdict(report))
    _write_lines(os.path.join(args.out_dir, "metrics.csv"), [
        "auc,acc,f1,recall,precision,mac_ratio",
        ",".join(repr(v) for v in (report.auc, report.acc, report.f1,
                                   report.recall, report.precision,
                                   report.attention_mac_ratio)),
    ])
    _write_lines(os.path.join(args.out_dir, "loss_curve.csv"),
                 ["epoch,train_loss,val_auc"] +
                 [f"{row['epoch']},{row['train_loss']!r},{row['val_auc']!r}" for row in curve])
    write_checkpoint(os.path.join(args.out_dir, "checkpoint.phc1"),
                     cfg.to_json_dict(), params)
    print(f"test auc={report.auc:.4f} acc={report.acc:.4f} f1={report.f1:.4f} "
          f"mac_ratio={report.attention_mac_ratio:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    images, labels, splits = _load_or_exit(args.data_dir)
    base_cfg = _model_config(args)
    rows = ablation_harness(images, labels, splits, base_cfg, _train_settings(args))
    os.makedirs(args.out_dir, exist_ok=True)
    _write_lines(os.path.join(args.out_dir, "ablation.csv"), ablation_csv_lines(rows))
    _write_json(os.path.join(args.out_dir, "ablation.json"),
                {"config": base_cfg.to_json_dict(), "train": asdict(_train_settings(args)),
                 "rows": rows})
    failed = sum(1 for r in rows if r["status"] != "ok")
    print(f"{len(rows)} cells written ({failed} failed)")
    return EXIT_OK


def cmd_bench(args) -> int:
    rows = bench_report(d=args.dim, heads=args.heads)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_lines(os.path.join(args.out_dir, "bench.csv"), bench_csv_lines(rows))
    _write_json(os.path.join(args.out_dir, "bench.json"),
                {"config": {"d": args.dim, "heads": args.heads}, "rows": rows})
    print(f"bench over n={[r['n'] for r in rows]} written")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    err = pipeline_grad_check(method=args.method, seed=args.seed,
                              merge_placement=args.merge_placement,
                              j_iters=args.j_iters)
    print(f"max relative gradient error: {err:.3e} (tolerance {GRAD_TOLERANCE:.0e})")
    if err >= GRAD_TOLERANCE:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pathohr",
                     description="Multi-resolution token-merging pipeline laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic slide dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-slides", type=int, default=200)
    p.add_argument("--balance", type=float, default=0.5)
    p.add_argument("--signal-fraction", type=float, default=0.3)
    p.add_argument("--width", type=int, default=96)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("run", help="train and evaluate one configuration")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="6 methods x 2 residual settings grid")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    _add_model_flags(p, placement_default="per_iteration")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench", help="analytic MACs and wall time, merged vs not")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("grad-check", help="finite-difference check of the pipeline gradient")
    p.add_argument("--method", choices=METHODS, default="attention_score")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--j-iters", type=int, default=1)
    p.add_argument("--merge-placement", choices=("post_loop", "per_iteration"),
                   default="post_loop")
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (TrainingDiverged, NumericError, UndefinedMetric) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FormatError as exc:
        print(f"error: unreadable input: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ConfigError, PathoHRError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
