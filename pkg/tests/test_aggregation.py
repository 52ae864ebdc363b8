"""FedAvg aggregation: weights, bit-exact idempotence, oracle agreement."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitllm.aggregation import (
    WeightedAdapterSet,
    compute_weights,
    fedavg_adapters,
    group_weights,
    product_mean_gap,
)
from splitllm.errors import ConfigError, ShapeError
from splitllm.model import LoraAdapter
from splitllm.rng import Rng


def _adapter(seed, d=6, r=3, h=5, layer=1, dtype=np.float32):
    rng = Rng(seed)
    a = rng.derive("a").normals(d * r).reshape(d, r).astype(dtype)
    b = rng.derive("b").normals(r * h).reshape(r, h).astype(dtype)
    return LoraAdapter(layer, a, b, 0.02)


class TestComputeWeights:
    def test_symmetric(self):
        assert compute_weights([10, 10]) == [0.5, 0.5]

    def test_arithmetic(self):
        assert compute_weights([1, 3]) == [0.25, 0.75]

    def test_twenty_equal_shards(self):
        weights = compute_weights([30] * 20)
        assert all(w == 0.05 for w in weights)
        assert abs(sum(weights) - 1.0) <= 1e-12

    def test_zero_entries_allowed_but_not_all(self):
        assert compute_weights([0, 4]) == [0.0, 1.0]
        with pytest.raises(ConfigError):
            compute_weights([0, 0])

    def test_invalid_inputs(self):
        with pytest.raises(ConfigError):
            compute_weights([])
        with pytest.raises(ConfigError):
            compute_weights([-1, 2])

    @given(st.lists(st.integers(0, 1000), min_size=1, max_size=40).filter(lambda s: sum(s) > 0))
    @settings(max_examples=50, deadline=None)
    def test_sum_to_one_property(self, sizes):
        assert abs(sum(compute_weights(sizes)) - 1.0) <= 1e-12


def test_group_weights():
    weights = [0.1, 0.2, 0.3, 0.4]
    groups = [1, 1, 2, 2]
    assert group_weights(weights, groups) == [pytest.approx(0.3), pytest.approx(0.7)]


class TestFedavg:
    def test_identical_replicas_bit_exact(self):
        # Non-dyadic weights (1/3) are the hard case for bit-exactness.
        base = _adapter(7)
        entries = [(base.copy(), 1.0 / 3.0) for _ in range(3)]
        merged = fedavg_adapters(WeightedAdapterSet(1, entries))
        assert merged.A.tobytes() == base.A.tobytes()
        assert merged.B.tobytes() == base.B.tobytes()

    def test_two_replica_mean(self):
        lo, hi = _adapter(1), _adapter(1)
        lo.A[:] = 0.0
        hi.A[:] = 2.0
        merged = fedavg_adapters(WeightedAdapterSet(1, [(lo, 0.5), (hi, 0.5)]))
        assert (merged.A == 1.0).all()

    def test_against_brute_force_oracle(self):
        entries = [(_adapter(seed), w) for seed, w in
                   zip(range(5), compute_weights([3, 7, 11, 2, 9]))]
        merged = fedavg_adapters(WeightedAdapterSet(1, entries))
        expected_a = sum(w * ad.A.astype(np.float64) for ad, w in entries)
        expected_b = sum(w * ad.B.astype(np.float64) for ad, w in entries)
        for got, want in ((merged.A, expected_a), (merged.B, expected_b)):
            denom = np.maximum(np.abs(want), 1e-8)
            assert (np.abs(got.astype(np.float64) - want) / denom).max() < 1e-6

    def test_weight_sum_enforced(self):
        entries = [(_adapter(1), 0.5), (_adapter(2), 0.6)]
        with pytest.raises(ConfigError):
            fedavg_adapters(WeightedAdapterSet(1, entries))

    def test_layer_and_shape_mismatch_rejected(self):
        wrong_layer = _adapter(3, layer=2)
        with pytest.raises(ShapeError):
            fedavg_adapters(WeightedAdapterSet(1, [(wrong_layer, 1.0)]))
        small = _adapter(4, d=4)
        with pytest.raises(ShapeError):
            fedavg_adapters(WeightedAdapterSet(1, [(_adapter(3), 0.5), (small, 0.5)]))

    def test_empty_set_rejected(self):
        with pytest.raises(ConfigError):
            fedavg_adapters(WeightedAdapterSet(1, []))

    @given(st.integers(0, 2**31), st.integers(2, 6))
    @settings(max_examples=30, deadline=None)
    def test_convex_combination_bound(self, seed, count):
        sizes = [Rng(seed).derive("s", i).below(50) + 1 for i in range(count)]
        entries = [(_adapter(seed + i), w)
                   for i, w in enumerate(compute_weights(sizes))]
        merged = fedavg_adapters(WeightedAdapterSet(1, entries))
        stack = np.stack([ad.A for ad, _ in entries]).astype(np.float64)
        lo = stack.min(axis=0) - 1e-6 * np.abs(stack).max()
        hi = stack.max(axis=0) + 1e-6 * np.abs(stack).max()
        assert (merged.A.astype(np.float64) >= lo).all()
        assert (merged.A.astype(np.float64) <= hi).all()

    def test_arrival_order_independent_after_sorting(self):
        # Callers sort entries by (m, n) before aggregating; the sorted set
        # gives one result regardless of how replicas arrived.
        keyed = list(enumerate(
            (_adapter(s), w) for s, w in zip(range(4), compute_weights([1, 2, 3, 4]))
        ))
        merged = fedavg_adapters(WeightedAdapterSet(1, [e for _, e in keyed]))
        arrival = [keyed[2], keyed[0], keyed[3], keyed[1]]
        resorted = [entry for _, entry in sorted(arrival, key=lambda item: item[0])]
        merged2 = fedavg_adapters(WeightedAdapterSet(1, resorted))
        assert merged.A.tobytes() == merged2.A.tobytes()
        assert merged.B.tobytes() == merged2.B.tobytes()


class TestProductMeanGap:
    def test_zero_for_identical_replicas(self):
        entries = [(_adapter(5), 0.5), (_adapter(5), 0.5)]
        assert product_mean_gap(WeightedAdapterSet(1, entries)) == 0.0

    def test_positive_for_distinct_replicas(self):
        # Averaging factors is not averaging products; the diagnostic
        # reports that discrepancy.
        entries = [(_adapter(6), 0.5), (_adapter(66), 0.5)]
        assert product_mean_gap(WeightedAdapterSet(1, entries)) > 1e-6
