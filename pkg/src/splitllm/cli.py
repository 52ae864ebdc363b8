"""Command-line entry point: `splitllm run | compare | gradcheck`.

Every invocation resolves a configuration (file plus flag overrides),
derives a run directory `<confighash>-<seed>/` under the output root, and
writes all artifacts there.  Exit codes: 0 success, 1 runtime failure,
2 configuration rejection.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import gradcheck as gradcheck_mod
from . import model as model_mod
from . import plots, wire
from .baselines import compare
from .config import RunConfig, config_hash, config_text, parse_config
from .errors import ConfigError, SplitLLMError
from .metrics import peak_memory_reduction
from .protocol import run_training

OUT_ENV = "SPLITLLM_OUT"
DEFAULT_OUT = "runs"

# Artifact sets per subcommand (documented contract; tests assert these).
RUN_ARTIFACTS = (
    "config.txt",
    "metrics.csv",
    "events.jsonl",
    "adapters",
    "figures/training_curves.png",
    "figures/link_traffic.png",
)
COMPARE_ARTIFACTS = (
    "config.txt",
    "comparison.csv",
    "comparison.json",
    "figures/comparison_memory.png",
    "figures/comparison_accuracy.png",
)

_OVERRIDE_FLAGS = {
    "seed": "seed",
    "rounds": "rounds",
    "users": "users",
    "edges": "edges",
    "cut": "cut",
    "partition": "partition",
    "beta": "beta",
    "precision": "precision",
    "epochs": "epochs",
    "batch": "batch",
    "rank": "rank",
    "schemes": "schemes",
}


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="config file (key = value lines)")
    parser.add_argument("--seed", type=int, metavar="U64")
    parser.add_argument("--rounds", type=int, metavar="T")
    parser.add_argument("--users", type=int, metavar="N")
    parser.add_argument("--edges", type=int, metavar="M")
    parser.add_argument("--cut", type=int, metavar="LE")
    parser.add_argument("--partition", choices=("iid", "dirichlet"))
    parser.add_argument("--beta", type=float, metavar="F")
    parser.add_argument("--precision", choices=("f32", "f64"))
    parser.add_argument("--epochs", type=int, metavar="K")
    parser.add_argument("--batch", type=int, metavar="B")
    parser.add_argument("--rank", type=int, metavar="R")
    parser.add_argument("--parallel-edges", action="store_true", default=None,
                        help="run edges on a thread pool (bit-identical output)")
    parser.add_argument("--out", metavar="DIR",
                        help=f"output root (default ${OUT_ENV} or ./{DEFAULT_OUT})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitllm",
        description="Deterministic three-tier split-learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train with the three-tier protocol")
    _common_flags(p_run)

    p_cmp = sub.add_parser("compare", help="run all schemes and emit the comparison table")
    _common_flags(p_cmp)
    p_cmp.add_argument("--schemes", metavar="LIST",
                       help="comma-separated subset of splitllm,fl,sl")

    p_gc = sub.add_parser("gradcheck", help="finite-difference and split-exactness oracles")
    _common_flags(p_gc)
    p_gc.add_argument("--corrupt-backward", type=float, default=0.0,
                      help=argparse.SUPPRESS)
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = {}
    for flag, key in _OVERRIDE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "parallel_edges", None):
        overrides["parallel_edges"] = True
    return parse_config(args.config, overrides)


def _run_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    root = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    path = Path(root) / f"{config_hash(config)}-{config.seed}"
    path.mkdir(parents=True, exist_ok=True)
    (path / "figures").mkdir(exist_ok=True)
    return path


def cmd_run(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    run_dir = _run_dir(args, config)
    result = run_training(config)

    (run_dir / "config.txt").write_text(config_text(config), encoding="utf-8")
    (run_dir / "metrics.csv").write_text(result.metrics_csv(), encoding="utf-8")
    with open(run_dir / "events.jsonl", "w", encoding="utf-8") as fh:
        for event in result.network.events:
            fh.write(json.dumps(event) + "\n")
    adapter_dir = run_dir / "adapters"
    adapter_dir.mkdir(exist_ok=True)
    for idx in sorted(result.final_adapters):
        ad = result.final_adapters[idx]
        wire.write_adapter(adapter_dir / f"layer_{idx:02d}.slad", idx, ad.A, ad.B)
    plots.training_curves(result.rounds, run_dir / "figures" / "training_curves.png")
    plots.link_traffic(result.rounds, run_dir / "figures" / "link_traffic.png")

    final_acc = result.rounds[-1].acc if result.rounds else float("nan")
    print(f"run directory: {run_dir}")
    print(f"final accuracy: {final_acc:.4f} (best {result.best_accuracy:.4f})")
    for warning in result.warnings[:5]:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    run_dir = _run_dir(args, config)
    result = compare(config, config.schemes)
    reduction = peak_memory_reduction(config)

    (run_dir / "config.txt").write_text(config_text(config), encoding="utf-8")
    (run_dir / "comparison.csv").write_text(result.to_csv(), encoding="utf-8")
    payload = {"rows": result.to_json_obj(), "peak_memory_reduction": reduction}
    (run_dir / "comparison.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8"
    )
    plots.comparison_memory(result.rows, run_dir / "figures" / "comparison_memory.png")
    plots.comparison_accuracy(result.rows, run_dir / "figures" / "comparison_accuracy.png")

    print(f"run directory: {run_dir}")
    print(result.to_csv(), end="")
    print(f"peak memory reduction vs one-tier training: {reduction:.1%}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    overrides = {
        "widths": (12, 10),
        "input_dim": 8,
        "classes": 4,
        "rank": 3,
        "cut": 2,
        "rounds": 25,
        "epochs": 2,
        "batch": 8,
        "train_per_class": 30,
        "test_per_class": 10,
    }
    config = _resolve_config(args)
    # The check demands a tiny model; shrink unless the user supplied a
    # config file (then their sizes are validated against the cap).
    if args.config is None:
        merged = {**overrides}
        for flag in ("seed", "precision", "rounds", "epochs", "batch"):
            value = getattr(args, flag, None)
            if value is not None:
                merged[flag] = value
        config = parse_config(None, merged)

    corruption = getattr(args, "corrupt_backward", 0.0)
    model_mod._BACKWARD_CORRUPTION = corruption
    try:
        grad_err, checked = gradcheck_mod.adapter_gradient_check(config)
        loss_div, adapter_div = gradcheck_mod.split_divergence(config)
    finally:
        model_mod._BACKWARD_CORRUPTION = 0.0

    grad_tol = gradcheck_mod.GRAD_TOLERANCE
    split_tol = gradcheck_mod.split_tolerance(config.precision)
    print(f"gradient check: max relative error {grad_err:.3e} "
          f"over {checked} adapter entries (tolerance {grad_tol:.0e})")
    print(f"split exactness: max loss divergence {loss_div:.3e}, "
          f"max adapter divergence {adapter_div:.3e} (tolerance {split_tol:.0e})")
    ok = grad_err < grad_tol and loss_div < split_tol and adapter_div < split_tol
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "compare": cmd_compare, "gradcheck": cmd_gradcheck}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (SplitLLMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
