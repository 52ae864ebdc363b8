"""Evaluation, analytical memory accounting, and result containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import Dataset
from .errors import ConfigError
from .model import FrozenLayer, LoraAdapter, adapter_rank, segment_forward
from .numerics import softmax_cross_entropy


def evaluate(
    layers: list[FrozenLayer],
    adapters: list[LoraAdapter],
    test_set: Dataset,
) -> tuple[float, float]:
    """Forward-only pass over the test set: (mean loss, argmax accuracy)."""
    if test_set.num_samples < 1:
        raise ConfigError("evaluate requires a non-empty test set")
    logits, _ = segment_forward(layers, adapters, test_set.X)
    loss, _ = softmax_cross_entropy(logits, test_set.y)
    predictions = logits.argmax(axis=1)
    accuracy = float((predictions == test_set.y).mean())
    return loss, accuracy


# ---------------------------------------------------------------------------
# Analytical peak-memory model
# ---------------------------------------------------------------------------
#
# Per tier and scheme the model is additive:
#   frozen-param bytes + adapter bytes + optimizer-state bytes
#   + batch * widest-layer-width-in-tier * resident-contexts * itemsize
#
# Resident contexts: the user and edge tiers always hold one activation
# context.  The three-tier cloud serves all M edges concurrently (M
# contexts).  The two-tier baseline serves users strictly sequentially, so
# its server holds one context by default; `sl_parallel_contexts` scales
# that residency to model a server juggling several users at once.  The
# one-tier baseline trains everything on the user device.  Values are
# deterministic bytes, not process measurements.

MEMORY_SCHEMES = ("splitllm", "fl", "sl")


def _tier_terms(dims, ranks, widths_touched, batch, contexts, itemsize):
    frozen = sum(d * h for d, h in dims) * itemsize
    adapters = sum(r * (d + h) for (d, h), r in zip(dims, ranks)) * itemsize
    optimizer = adapters  # momentum buffers mirror every adapter factor
    activations = batch * max(widths_touched) * contexts * itemsize
    return {
        "frozen": frozen,
        "adapters": adapters,
        "optimizer": optimizer,
        "activations": activations,
        "total": frozen + adapters + optimizer + activations,
    }


def _layer_slices(config: RunConfig):
    dims = config.layer_dims()
    ranks = [adapter_rank(config.rank, d, h) for d, h in dims]
    return dims, ranks


def memory_estimate(config: RunConfig, scheme: str) -> dict[str, dict[str, int]]:
    """Per-tier byte estimates; absent tiers report zero bytes."""
    if scheme not in MEMORY_SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    dims, ranks = _layer_slices(config)
    depth = len(dims)
    cut = config.cut
    batch = config.batch
    itemsize = np.dtype(config.dtype).itemsize
    empty = {"frozen": 0, "adapters": 0, "optimizer": 0, "activations": 0, "total": 0}

    def tier(sel, contexts):
        sel_dims = [dims[i] for i in sel]
        sel_ranks = [ranks[i] for i in sel]
        touched = [w for d, h in sel_dims for w in (d, h)]
        return _tier_terms(sel_dims, sel_ranks, touched, batch, contexts, itemsize)

    if scheme == "fl":
        return {
            "user": tier(range(depth), 1),
            "edge": dict(empty),
            "cloud": dict(empty),
        }
    if scheme == "sl":
        contexts = config.sl_parallel_contexts or 1
        return {
            "user": tier([0], 1),
            "edge": dict(empty),
            "cloud": tier(range(1, depth), contexts),
        }
    return {
        "user": tier([0], 1),
        "edge": tier(range(1, cut), 1),
        "cloud": tier(range(cut, depth), config.edges),
    }


def adapter_bytes(config: RunConfig) -> int:
    """Exact bytes of all adapter factors: sum_l r_l (d_l + h_l) * itemsize."""
    dims, ranks = _layer_slices(config)
    itemsize = np.dtype(config.dtype).itemsize
    return sum(r * (d + h) for (d, h), r in zip(dims, ranks)) * itemsize


def peak_memory_reduction(config: RunConfig) -> float:
    """(FL user-tier bytes - max three-tier tier bytes) / FL user-tier bytes.

    Reported as context alongside the comparison table; desk-scale values
    are not comparable to full-scale absolute figures.
    """
    fl_user = memory_estimate(config, "fl")["user"]["total"]
    split_tiers = memory_estimate(config, "splitllm")
    worst = max(split_tiers[t]["total"] for t in ("user", "edge", "cloud"))
    return (fl_user - worst) / fl_user


# ---------------------------------------------------------------------------
# Result containers
# ---------------------------------------------------------------------------

ROUND_FIELDS = (
    "round", "scheme", "loss", "acc",
    "user_bytes", "edge_bytes", "cloud_bytes",
)


@dataclass
class RoundRecord:
    """One aggregated round: training loss, test metrics, cumulative bytes
    transmitted by each tier, aggregation diagnostic, and a wall-clock
    estimate when a latency model is configured."""

    round: int
    loss: float
    acc: float
    test_loss: float
    user_bytes: int
    edge_bytes: int
    cloud_bytes: int
    product_gap: float = 0.0
    time_estimate_s: float = 0.0

    def csv_row(self, scheme: str) -> str:
        return (
            f"{self.round},{scheme},{self.loss!r},{self.acc!r},"
            f"{self.user_bytes},{self.edge_bytes},{self.cloud_bytes}"
        )


@dataclass
class TrainingResult:
    scheme: str
    config: RunConfig
    rounds: list[RoundRecord]
    step_losses: list[float]
    final_adapters: dict[int, LoraAdapter]
    network: "object"  # SimNetwork; typed loosely to avoid an import cycle
    warnings: list[str] = field(default_factory=list)

    @property
    def best_accuracy(self) -> float:
        return max((r.acc for r in self.rounds), default=0.0)

    def rounds_to_accuracy(self, target: float) -> int | None:
        for record in self.rounds:
            if record.acc >= target:
                return record.round
        return None

    def metrics_csv(self) -> str:
        lines = [",".join(ROUND_FIELDS)]
        lines.extend(r.csv_row(self.scheme) for r in self.rounds)
        return "\n".join(lines) + "\n"
