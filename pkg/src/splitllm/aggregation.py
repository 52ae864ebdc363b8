"""FedAvg aggregation of adapter replicas at the round barrier.

Replicas are combined by a data-size-weighted mean, factor by factor
(A and B independently).  Summation runs in float64 in a fixed ascending
(m, n) order so results are independent of arrival order; the result is
stored back at compute precision.

The weighted mean is evaluated in anchored form

    out = anchor + sum_i w_i * (replica_i - anchor)

which is algebraically identical (weights sum to 1) but guarantees that a
set of bit-identical replicas aggregates to exactly those bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .model import LoraAdapter

WEIGHT_SUM_TOL = 1e-12


def compute_weights(data_sizes: list[int]) -> list[float]:
    """w_i = size_i / sum(sizes); sizes are exact integers."""
    if not data_sizes:
        raise ConfigError("compute_weights requires at least one size")
    if any(s < 0 for s in data_sizes):
        raise ConfigError("data sizes must be non-negative")
    total = sum(data_sizes)
    if total == 0:
        raise ConfigError("all data sizes are zero; cannot derive weights")
    return [s / total for s in data_sizes]


def group_weights(weights: list[float], groups: list[int]) -> list[float]:
    """Collapse per-user weights into per-group (per-edge) weights.

    `groups[i]` is the group id of entry i; output follows ascending
    group id, summing member weights in input order.
    """
    ids = sorted(set(groups))
    return [sum(w for w, g in zip(weights, groups) if g == gid) for gid in ids]


@dataclass
class WeightedAdapterSet:
    """Replicas of one layer's adapter plus their aggregation weights,
    already ordered ascending by (m, n)."""

    layer_index: int
    entries: list[tuple[LoraAdapter, float]]

    def validate(self) -> None:
        if not self.entries:
            raise ConfigError("empty weighted adapter set")
        first = self.entries[0][0]
        for ad, _ in self.entries:
            if ad.layer_index != self.layer_index:
                raise ShapeError(
                    f"adapter for layer {ad.layer_index} in set for layer {self.layer_index}"
                )
            if ad.A.shape != first.A.shape or ad.B.shape != first.B.shape:
                raise ShapeError("adapter replicas disagree on factor shapes")
        total = sum(w for _, w in self.entries)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ConfigError(f"aggregation weights sum to {total!r}, expected 1")


def _weighted_mean(arrays: list[np.ndarray], weights: list[float], out_dtype) -> np.ndarray:
    anchor = arrays[0].astype(np.float64)
    delta = np.zeros_like(anchor)
    for arr, w in zip(arrays, weights):
        delta += w * (arr.astype(np.float64) - anchor)
    # Where the correction is exactly zero (identical replicas), keep the
    # anchor bits untouched.
    mean = np.where(delta == 0.0, anchor, anchor + delta)
    return mean.astype(out_dtype)


def fedavg_adapters(adapter_set: WeightedAdapterSet) -> LoraAdapter:
    """Weighted mean of the replicas; momentum is owned by callers and is
    reset for the new round (optimizer state is never aggregated)."""
    adapter_set.validate()
    adapters = [ad for ad, _ in adapter_set.entries]
    weights = [w for _, w in adapter_set.entries]
    dtype = adapters[0].A.dtype
    a = _weighted_mean([ad.A for ad in adapters], weights, dtype)
    b = _weighted_mean([ad.B for ad in adapters], weights, dtype)
    return LoraAdapter(adapter_set.layer_index, a, b, adapters[0].init_std)


def product_mean_gap(adapter_set: WeightedAdapterSet) -> float:
    """Frobenius norm of  sum_i w_i (A_i B_i)  -  (sum_i w_i A_i)(sum_i w_i B_i).

    Parameter-space averaging (what FedAvg prescribes for the factors) does
    not equal averaging the effective deltas; this diagnostic reports the
    discrepancy so runs can track it per round.
    """
    adapter_set.validate()
    mean_of_products = None
    for ad, w in adapter_set.entries:
        term = w * (ad.A.astype(np.float64) @ ad.B.astype(np.float64))
        mean_of_products = term if mean_of_products is None else mean_of_products + term
    merged = fedavg_adapters(adapter_set)
    product_of_means = merged.A.astype(np.float64) @ merged.B.astype(np.float64)
    return float(np.linalg.norm(mean_of_products - product_of_means))
