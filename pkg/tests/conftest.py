"""Shared fixtures and independent numeric oracles for the test suite."""

import numpy as np
import pytest
from hypothesis import settings

from splitllm.config import RunConfig

# The whole artifact is deterministic; keep property tests that way too.
settings.register_profile("deterministic", derandomize=True, deadline=None)
settings.load_profile("deterministic")


def central_difference(loss_fn, arr: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. every entry
    of `arr` (float64, mutated in place and restored)."""
    assert arr.dtype == np.float64, "oracle runs in 64-bit"
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = loss_fn()
        flat[i] = keep - h
        down = loss_fn()
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.abs(a) + np.abs(b))
    return float((np.abs(a - b) / denom).max())


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop float64 reference product."""
    rows, inner = a.shape
    inner2, cols = b.shape
    assert inner == inner2
    out = np.zeros((rows, cols), dtype=np.float64)
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += float(a[i, k]) * float(b[k, j])
            out[i, j] = acc
    return out


def adapters_bytes(adapters: dict) -> bytes:
    """Canonical byte string of an adapter pool, for bitwise comparisons."""
    chunks = []
    for idx in sorted(adapters):
        ad = adapters[idx]
        chunks.append(ad.A.tobytes())
        chunks.append(ad.B.tobytes())
    return b"".join(chunks)


@pytest.fixture
def tiny_config() -> RunConfig:
    """Single-user configuration small enough for exactness runs."""
    return RunConfig(
        seed=11, edges=1, users=1, input_dim=8, widths=(24, 16), classes=3,
        cut=2, rank=4, batch=8, rounds=10, train_per_class=40, test_per_class=15,
    ).validate()


@pytest.fixture
def small_config() -> RunConfig:
    """Multi-edge configuration that still runs in well under a second."""
    return RunConfig(
        seed=5, edges=2, users=4, input_dim=8, widths=(24, 16), classes=3,
        cut=2, rank=4, batch=8, rounds=3, train_per_class=40, test_per_class=15,
    ).validate()
