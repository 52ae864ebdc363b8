"""Frozen layered model with per-layer low-rank adapters.

A model is a chain of frozen linear layers with elementwise activations.
Each layer l (1-based) owns one trainable adapter pair (A_l, B_l) whose
product is added to the frozen weight, so the effective weight is
W_l + A_l @ B_l.  Only adapters ever receive gradients; frozen weights are
write-protected at construction and shared read-only everywhere.

The model is partitioned at two cuts: layer 1 runs on the user tier,
layers 2..cut on the edge tier, layers cut+1..L on the cloud tier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .errors import ConfigError, ProtocolError, ShapeError
from .rng import Rng

USER_TIER = "user"
EDGE_TIER = "edge"
CLOUD_TIER = "cloud"

# Test hook: cmd_gradcheck's negative control scales adapter gradients by
# (1 + _BACKWARD_CORRUPTION) to prove the oracle detects a broken backward.
_BACKWARD_CORRUPTION = 0.0


@dataclass
class LoraAdapter:
    """Trainable low-rank pair attached to one frozen layer."""

    layer_index: int
    A: np.ndarray  # (d, r)
    B: np.ndarray  # (r, h)
    init_std: float

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def trainable_params(self) -> int:
        return self.A.size + self.B.size

    def delta(self) -> np.ndarray:
        """Effective weight update A @ B."""
        return numerics.matmul(self.A, self.B)

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(self.layer_index, self.A.copy(), self.B.copy(), self.init_std)


@dataclass
class FrozenLayer:
    """Pre-trained weight matrix (never updated) plus its activation."""

    W: np.ndarray  # (d, h), write-protected
    activation: str

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]


@dataclass
class LayeredModel:
    layers: list[FrozenLayer]
    adapters: list[LoraAdapter]
    input_dim: int
    class_count: int

    @property
    def depth(self) -> int:
        return len(self.layers)

    def layer_dims(self) -> list[tuple[int, int]]:
        return [(layer.in_dim, layer.out_dim) for layer in self.layers]


def adapter_rank(rank: int, d: int, h: int) -> int:
    """Effective rank for a (d x h) layer: clamped below min(d, h)."""
    return max(1, min(rank, min(d, h) - 1))


def init_adapter(d: int, h: int, rank: int, std: float, rng: Rng, dtype=np.float32,
                 layer_index: int = 1) -> LoraAdapter:
    """A ~ Gaussian(0, std^2), B = 0, so the initial delta A @ B is zero."""
    if rank < 1:
        raise ConfigError(f"adapter rank must be >= 1, got {rank}")
    if rank >= min(d, h):
        raise ConfigError(
            f"adapter rank {rank} violates low-rank condition for a {d}x{h} layer"
        )
    a = numerics.gaussian_matrix(d, rank, 0.0, std, rng, dtype=dtype)
    b = np.zeros((rank, h), dtype=dtype)
    return LoraAdapter(layer_index, a, b, std)


def model_dims(input_dim: int, widths: tuple[int, ...], class_count: int) -> list[tuple[int, int]]:
    chain = [input_dim, *widths, class_count]
    return list(zip(chain[:-1], chain[1:]))


def build_model(
    input_dim: int,
    widths: tuple[int, ...],
    class_count: int,
    rank: int,
    init_std: float,
    activation: str,
    rng: Rng,
    dtype=np.float32,
    frozen_std: float | None = None,
) -> LayeredModel:
    """Build a frozen model with fresh adapters.

    Hidden layers use `activation`; the final layer emits raw logits.
    Frozen weights default to std 1/sqrt(fan_in).  The final layer's
    adapter rank is clamped to stay below min(fan_in, class_count).
    """
    if activation not in numerics.ACTIVATIONS:
        raise ConfigError(f"unknown activation kind: {activation!r}")
    if class_count < 2:
        raise ConfigError("class_count must be >= 2")
    dims = model_dims(input_dim, widths, class_count)
    layers: list[FrozenLayer] = []
    adapters: list[LoraAdapter] = []
    for idx, (d, h) in enumerate(dims, start=1):
        std = frozen_std if frozen_std is not None else 1.0 / np.sqrt(d)
        w = numerics.gaussian_matrix(d, h, 0.0, std, rng.derive("frozen", idx), dtype=dtype)
        w.flags.writeable = False
        kind = activation if idx < len(dims) else "identity"
        layers.append(FrozenLayer(w, kind))
        adapters.append(
            init_adapter(
                d, h, adapter_rank(rank, d, h), init_std,
                rng.derive("adapter", idx), dtype=dtype, layer_index=idx,
            )
        )
    return LayeredModel(layers, adapters, input_dim, class_count)


def trainable_param_count(model: LayeredModel) -> int:
    return sum(ad.trainable_params for ad in model.adapters)


def frozen_param_count(model: LayeredModel) -> int:
    return sum(layer.W.size for layer in model.layers)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class LayerCache:
    x: np.ndarray       # layer input
    z: np.ndarray       # pre-activation x @ (W + AB)
    weff: np.ndarray    # W + AB as used by the forward pass


@dataclass
class SegmentCache:
    items: list[LayerCache]
    consumed: bool = False


def layer_forward(layer: FrozenLayer, adapter: LoraAdapter, x: np.ndarray) -> tuple[np.ndarray, LayerCache]:
    """y = act(x @ (W + A @ B)); the cache retains x, the pre-activation,
    and the effective weight so backward reuses the exact forward bits."""
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ShapeError(
            f"layer {adapter.layer_index} expects input width {layer.in_dim}, "
            f"got {x.shape}"
        )
    weff = layer.W + adapter.delta()
    z = numerics.matmul(x, weff)
    y = numerics.activation_forward(layer.activation, z)
    return y, LayerCache(x, z, weff)


def layer_backward(
    layer: FrozenLayer,
    adapter: LoraAdapter,
    cache: LayerCache,
    dy: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients for one layer: returns (dx, gA, gB); W gets no gradient.

    With dz = dy * act'(z):  gA = x^T (dz B^T),  gB = (x A)^T dz,
    dx = dz (W + AB)^T.
    """
    if dy.shape != cache.z.shape:
        raise ShapeError(
            f"backward shape mismatch at layer {adapter.layer_index}: "
            f"{dy.shape} vs {cache.z.shape}"
        )
    dz = numerics.activation_backward(layer.activation, cache.z, dy)
    ga = numerics.matmul(cache.x.T, numerics.matmul(dz, adapter.B.T))
    gb = numerics.matmul(numerics.matmul(cache.x, adapter.A).T, dz)
    dx = numerics.matmul(dz, cache.weff.T)
    if _BACKWARD_CORRUPTION:
        ga = ga * (1.0 + _BACKWARD_CORRUPTION)
        gb = gb * (1.0 + _BACKWARD_CORRUPTION)
    return dx, ga, gb


def segment_forward(
    layers: list[FrozenLayer],
    adapters: list[LoraAdapter],
    x: np.ndarray,
) -> tuple[np.ndarray, SegmentCache]:
    """Sequential composition of layer_forward over one tier's layers."""
    if not layers:
        raise ConfigError("segment_forward requires a non-empty segment")
    if len(layers) != len(adapters):
        raise ShapeError("segment layer/adapter count mismatch")
    caches = []
    out = x
    for layer, adapter in zip(layers, adapters):
        out, cache = layer_forward(layer, adapter, out)
        caches.append(cache)
    return out, SegmentCache(caches)


def segment_backward(
    layers: list[FrozenLayer],
    adapters: list[LoraAdapter],
    cache: SegmentCache,
    upstream: np.ndarray,
) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
    """Reverse composition of layer_backward; consumes the cache exactly once.

    Returns the gradient w.r.t. the segment input (what crosses the wire)
    and per-layer (gA, gB) in ascending layer order.
    """
    if cache.consumed:
        raise ProtocolError("segment cache already consumed")
    if len(cache.items) != len(layers):
        raise ShapeError("cache depth does not match segment depth")
    cache.consumed = True
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)
    d = upstream
    for idx in range(len(layers) - 1, -1, -1):
        d, ga, gb = layer_backward(layers[idx], adapters[idx], cache.items[idx], d)
        grads[idx] = (ga, gb)
    return d, grads


def frozen_forward(layers: list[FrozenLayer], x: np.ndarray) -> np.ndarray:
    """Forward through the frozen weights only (no adapters)."""
    out = x
    for layer in layers:
        z = numerics.matmul(out, layer.W)
        out = numerics.activation_forward(layer.activation, z)
    return out


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdapterState:
    """One trainable replica: adapter values plus SGD momentum buffers."""

    adapter: LoraAdapter
    vA: np.ndarray = field(default=None)
    vB: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.vA is None:
            self.vA = np.zeros_like(self.adapter.A)
        if self.vB is None:
            self.vB = np.zeros_like(self.adapter.B)

    @classmethod
    def fresh(cls, adapter: LoraAdapter) -> "AdapterState":
        return cls(adapter.copy())


def sgd_step(
    state: AdapterState,
    ga: np.ndarray,
    gb: np.ndarray,
    lr: float,
    momentum: float,
) -> None:
    """v <- momentum * v + g;  param <- param - lr * v (in place).

    With momentum 0 this is the plain  param <- param - lr * g  update.
    """
    ad = state.adapter
    if ga.shape != ad.A.shape or gb.shape != ad.B.shape:
        raise ShapeError(
            f"gradient shape mismatch for layer {ad.layer_index}: "
            f"{ga.shape}/{gb.shape} vs {ad.A.shape}/{ad.B.shape}"
        )
    dt = ad.A.dtype.type
    state.vA *= dt(momentum)
    state.vA += ga
    state.vB *= dt(momentum)
    state.vB += gb
    ad.A -= dt(lr) * state.vA
    ad.B -= dt(lr) * state.vB


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    """One tier's slice of the model: 1-based layer indices, in order."""

    tier: str
    indices: tuple[int, ...]

    def layers(self, model: LayeredModel) -> list[FrozenLayer]:
        return [model.layers[i - 1] for i in self.indices]

    def adapters_from(self, pool: dict[int, LoraAdapter]) -> list[LoraAdapter]:
        return [pool[i] for i in self.indices]


def partition_model(model: LayeredModel, cut: int) -> tuple[Segment, Segment, Segment]:
    """Three-way split: user {1}, edge {2..cut}, cloud {cut+1..L}."""
    depth = model.depth
    if not 1 < cut < depth:
        raise ConfigError(f"cut must satisfy 1 < cut < {depth}, got {cut}")
    user = Segment(USER_TIER, (1,))
    edge = Segment(EDGE_TIER, tuple(range(2, cut + 1)))
    cloud = Segment(CLOUD_TIER, tuple(range(cut + 1, depth + 1)))
    return user, edge, cloud


def tier_of_layer(layer_index: int, cut: int) -> str:
    if layer_index == 1:
        return USER_TIER
    if layer_index <= cut:
        return EDGE_TIER
    return CLOUD_TIER


def copy_adapters(adapters: list[LoraAdapter]) -> dict[int, LoraAdapter]:
    return {ad.layer_index: ad.copy() for ad in adapters}


def deep_adapter_pool(model: LayeredModel) -> dict[int, LoraAdapter]:
    return copy_adapters(model.adapters)
