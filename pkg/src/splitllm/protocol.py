"""Three-tier training protocol: node state machines, simulated network
with byte accounting, and the round orchestrator.

One round proceeds as: broadcast of the latest user/edge adapters, then for
every edge (in parallel, replica-isolated) each of its users runs K epochs
of the pipeline

    user forward -> edge forward -> cloud forward/loss/backward/update
    -> edge backward/update -> user backward/update

followed by adapter uploads and a FedAvg barrier in ascending (m, n)
order.  A sequential run and a thread-per-edge run produce bit-identical
results because every edge owns its replicas, its per-edge cloud context,
its RNG streams, and its own network scope (merged in edge order).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import wire
from .aggregation import (
    WeightedAdapterSet,
    compute_weights,
    fedavg_adapters,
    product_mean_gap,
)
from .config import RunConfig
from .data import Dataset, PartitionPlan, blobs_fixture, load_table, partition_dirichlet, partition_iid
from .errors import DataError, ProtocolError, ShapeError
from .metrics import RoundRecord, TrainingResult, evaluate
from .model import (
    AdapterState,
    FrozenLayer,
    LayeredModel,
    LoraAdapter,
    build_model,
    partition_model,
    segment_backward,
    segment_forward,
    sgd_step,
)
from .numerics import softmax_cross_entropy
from .rng import Rng
from .topology import Topology

logger = logging.getLogger(__name__)

LINKS = ("user_edge_up", "user_edge_down", "edge_cloud_up", "edge_cloud_down")

# Which tier transmits on each directed link (for the per-tier CSV columns).
_LINK_SENDER = {
    "user_edge_up": "user",
    "user_edge_down": "edge",
    "edge_cloud_up": "edge",
    "edge_cloud_down": "cloud",
}


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------

@dataclass
class Activation:
    t: int
    k: int
    m: int
    n: int
    tensor: np.ndarray
    labels: np.ndarray

    def encode(self, tag: str) -> bytes:
        payload = wire.encode_matrix(self.tensor) + wire.encode_labels(self.labels)
        return wire.encode_message(tag, self.t, self.k, self.m, self.n, payload)


@dataclass
class Gradient:
    t: int
    k: int
    m: int
    n: int
    tensor: np.ndarray

    def encode(self, tag: str) -> bytes:
        payload = wire.encode_matrix(self.tensor)
        return wire.encode_message(tag, self.t, self.k, self.m, self.n, payload)


def encode_adapter_set(tag: str, t: int, k: int, m: int, n: int,
                       adapters: list[LoraAdapter]) -> bytes:
    payload = b"".join(
        wire.encode_adapter(ad.layer_index, ad.A, ad.B) for ad in adapters
    )
    return wire.encode_message(tag, t, k, m, n, payload)


def encode_matrix_set(tag: str, t: int, k: int, m: int, n: int,
                      mats: list[np.ndarray]) -> bytes:
    payload = b"".join(wire.encode_matrix(w) for w in mats)
    return wire.encode_message(tag, t, k, m, n, payload)


# ---------------------------------------------------------------------------
# Simulated network
# ---------------------------------------------------------------------------

@dataclass
class LinkModel:
    """Optional latency model; affects reported time estimates only."""

    user_edge_bps: float | None = None
    edge_cloud_bps: float | None = None
    delay_s: float = 0.0

    def message_time(self, link: str, nbytes: int) -> float:
        rate = self.user_edge_bps if link.startswith("user_edge") else self.edge_cloud_bps
        if rate is None:
            return 0.0
        return self.delay_s + nbytes * 8.0 / rate


class NetworkScope:
    """Per-edge accumulator so concurrent edges never share counters."""

    def __init__(self, link_model: LinkModel | None = None):
        self.counters = {link: 0 for link in LINKS}
        self.events: list[dict] = []
        self.busy_s = 0.0
        self._links = link_model or LinkModel()

    def send(self, link: str, tag: str, t: int, k: int, m: int, n: int,
             encoded: bytes) -> None:
        nbytes = len(encoded)
        self.counters[link] += nbytes
        self.busy_s += self._links.message_time(link, nbytes)
        self.events.append(
            {"tag": tag, "t": t, "k": k, "m": m, "n": n, "bytes": nbytes}
        )


class SimNetwork:
    """Run-wide byte counters plus the ordered event log."""

    def __init__(self, link_model: LinkModel | None = None):
        self.link_model = link_model or LinkModel()
        self.counters = {link: 0 for link in LINKS}
        self.events: list[dict] = []
        self.time_estimate_s = 0.0

    def scope(self) -> NetworkScope:
        return NetworkScope(self.link_model)

    def merge(self, scope: NetworkScope) -> None:
        for link in LINKS:
            self.counters[link] += scope.counters[link]
        self.events.extend(scope.events)

    def merge_round(self, scopes: list[NetworkScope]) -> None:
        """Merge one round's per-edge scopes (already in ascending edge
        order); edges run in parallel so round time is the slowest edge."""
        for scope in scopes:
            self.merge(scope)
        if scopes:
            self.time_estimate_s += max(scope.busy_s for scope in scopes)

    def tier_bytes(self, tier: str) -> int:
        return sum(
            self.counters[link] for link, sender in _LINK_SENDER.items() if sender == tier
        )

    def user_side_bytes(self) -> int:
        """Traffic crossing the user's access link, both directions."""
        return self.counters["user_edge_up"] + self.counters["user_edge_down"]

    def bytes_by_tag(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for ev in self.events:
            out[ev["tag"]] = out.get(ev["tag"], 0) + ev["bytes"]
        return out

    def total_bytes(self) -> int:
        return sum(self.counters.values())


# ---------------------------------------------------------------------------
# Nodes
# ---------------------------------------------------------------------------

class UserNode:
    """Holds the user-side segment (layer 1), one adapter replica, and the
    forward caches awaiting their gradients."""

    def __init__(self, m: int, n: int, layers: list[FrozenLayer],
                 state: AdapterState, lr: float, momentum: float):
        self.m, self.n = m, n
        self.layers = layers
        self.state = state
        self.lr = lr
        self.momentum = momentum
        self._pending: dict[tuple[int, int], tuple] = {}

    def forward_step(self, t: int, k: int, x: np.ndarray, labels: np.ndarray) -> Activation:
        if (t, k) in self._pending:
            raise ProtocolError(f"user ({self.m},{self.n}) already sent epoch {t},{k}")
        out, cache = segment_forward(self.layers, [self.state.adapter], x)
        self._pending[(t, k)] = (cache, out.shape)
        return Activation(t, k, self.m, self.n, out, labels)

    def backward(self, grad: Gradient) -> None:
        key = (grad.t, grad.k)
        if grad.m != self.m or grad.n != self.n or key not in self._pending:
            raise ProtocolError(
                f"user ({self.m},{self.n}) got gradient with no matching activation"
            )
        cache, out_shape = self._pending.pop(key)
        if grad.tensor.shape != out_shape:
            raise ShapeError(
                f"gradient shape {grad.tensor.shape} does not match activation {out_shape}"
            )
        _, grads = segment_backward(self.layers, [self.state.adapter], cache, grad.tensor)
        sgd_step(self.state, grads[0][0], grads[0][1], self.lr, self.momentum)


class EdgeNode:
    """Holds the edge segment (layers 2..cut) and one adapter replica that
    is trained sequentially across this edge's users within a round."""

    def __init__(self, m: int, round_t: int, layers: list[FrozenLayer],
                 states: list[AdapterState], lr: float, momentum: float):
        self.m = m
        self.round_t = round_t
        self.layers = layers
        self.states = states
        self.lr = lr
        self.momentum = momentum
        self._pending: dict[tuple[int, int, int], tuple] = {}

    def _adapters(self) -> list[LoraAdapter]:
        return [s.adapter for s in self.states]

    def forward(self, act: Activation) -> Activation:
        if act.m != self.m or act.t != self.round_t:
            raise ProtocolError(
                f"edge {self.m} (round {self.round_t}) got activation for "
                f"edge {act.m} round {act.t}"
            )
        key = (act.t, act.k, act.n)
        if key in self._pending:
            raise ProtocolError(f"edge {self.m} got duplicate activation {key}")
        out, cache = segment_forward(self.layers, self._adapters(), act.tensor)
        self._pending[key] = (cache, out.shape, act.tensor.shape)
        return Activation(act.t, act.k, act.m, act.n, out, act.labels)

    def backward(self, grad: Gradient) -> Gradient:
        key = (grad.t, grad.k, grad.n)
        if grad.m != self.m or key not in self._pending:
            raise ProtocolError(
                f"edge {self.m} got gradient with no matching activation {key}"
            )
        cache, out_shape, in_shape = self._pending.pop(key)
        if grad.tensor.shape != out_shape:
            raise ShapeError(
                f"gradient shape {grad.tensor.shape} does not match activation {out_shape}"
            )
        downstream, grads = segment_backward(
            self.layers, self._adapters(), cache, grad.tensor
        )
        for state, (ga, gb) in zip(self.states, grads):
            sgd_step(state, ga, gb, self.lr, self.momentum)
        assert downstream.shape == in_shape
        return Gradient(grad.t, grad.k, grad.m, grad.n, downstream)


class CloudContext:
    """Per-edge replica of the cloud segment held at the cloud server."""

    def __init__(self, m: int, round_t: int, layers: list[FrozenLayer],
                 states: list[AdapterState], lr: float, momentum: float):
        self.m = m
        self.round_t = round_t
        self.layers = layers
        self.states = states
        self.lr = lr
        self.momentum = momentum

    def process(self, act: Activation) -> tuple[float, Gradient]:
        """Forward to logits, loss, backward, update; emits the cut-layer
        gradient that goes back to the edge."""
        if act.m != self.m or act.t != self.round_t:
            raise ProtocolError(
                f"cloud context {self.m} (round {self.round_t}) got activation "
                f"for edge {act.m} round {act.t}"
            )
        adapters = [s.adapter for s in self.states]
        logits, cache = segment_forward(self.layers, adapters, act.tensor)
        loss, dlogits = softmax_cross_entropy(logits, act.labels)
        downstream, grads = segment_backward(self.layers, adapters, cache, dlogits)
        for state, (ga, gb) in zip(self.states, grads):
            sgd_step(state, ga, gb, self.lr, self.momentum)
        if downstream.shape != act.tensor.shape:
            raise ShapeError("cut-layer gradient shape mismatch")
        return loss, Gradient(act.t, act.k, act.m, act.n, downstream)


# ---------------------------------------------------------------------------
# Training state and orchestration
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    config: RunConfig
    topology: Topology
    model: LayeredModel
    train: Dataset
    test: Dataset
    plan: PartitionPlan
    user_weights: dict[tuple[int, int], float]
    global_adapters: dict[int, LoraAdapter]
    network: SimNetwork
    rng: Rng
    round_index: int = 1
    warnings: list[str] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)

    @property
    def segments(self):
        return partition_model(self.model, self.config.cut)


def prepare_data(config: RunConfig, rng: Rng) -> tuple[Dataset, Dataset]:
    """Train/test datasets per config: synthetic blobs or a table file
    (file data is split 2:1 by a seeded permutation)."""
    if config.data == "blobs":
        return blobs_fixture(
            config.classes, config.input_dim,
            config.train_per_class, config.test_per_class,
            config.blob_spread, rng.derive("blobs"), dtype=config.dtype,
        )
    full = load_table(config.data, class_count=config.classes, dtype=config.dtype)
    if full.feature_dim != config.input_dim:
        raise DataError(
            f"{config.data}: feature dim {full.feature_dim} != input_dim {config.input_dim}"
        )
    perm = rng.derive("table-split").permutation(full.num_samples)
    n_train = max(1, (2 * full.num_samples) // 3)
    if n_train >= full.num_samples:
        raise DataError(f"{config.data}: too few samples to hold out a test split")
    tr, te = perm[:n_train], perm[n_train:]
    return (
        Dataset(full.X[tr], full.y[tr], full.class_count),
        Dataset(full.X[te], full.y[te], full.class_count),
    )


def warn_once(state: TrainState, message: str) -> None:
    """Record a warning the first time it appears in a run."""
    if message not in state.warnings:
        state.warnings.append(message)
        logger.warning(message)


def build_topology(config: RunConfig) -> Topology:
    if config.assignment == "round_robin":
        return Topology.round_robin(config.edges, config.users)
    return Topology.block(config.edges, config.users)


def build_partition(config: RunConfig, train: Dataset, topology: Topology,
                    rng: Rng) -> PartitionPlan:
    stream = rng.derive("partition")
    if config.partition == "dirichlet":
        plan = partition_dirichlet(train, topology, config.beta, stream)
    else:
        plan = partition_iid(train, topology, stream)
    plan.validate(train.num_samples)
    return plan


def init_state(config: RunConfig, account_distribution: bool = True) -> TrainState:
    """Build everything for a run.  When `account_distribution` is set, the
    one-shot cloud->edge->user distribution of the frozen segments is
    recorded on the network (the only time frozen weights cross the wire);
    baselines pass False and account their own distribution."""
    config.validate()
    rng = Rng(config.seed)
    train, test = prepare_data(config, rng)
    topology = build_topology(config)
    plan = build_partition(config, train, topology, rng)
    model = build_model(
        config.input_dim, config.widths, config.classes, config.rank,
        config.init_std, config.activation, rng.derive("model"),
        dtype=config.dtype, frozen_std=config.frozen_std,
    )
    sizes = plan.sizes()
    ordered = [sizes[(m, n)] for m, n, _ in topology.pairs()]
    weights = compute_weights(ordered)
    user_weights = {
        (m, n): w for (m, n, _), w in zip(topology.pairs(), weights)
    }
    network = SimNetwork(
        LinkModel(config.link_user_edge_bps, config.link_edge_cloud_bps,
                  config.link_delay_s)
    )
    state = TrainState(
        config=config, topology=topology, model=model, train=train, test=test,
        plan=plan, user_weights=user_weights,
        global_adapters={ad.layer_index: ad.copy() for ad in model.adapters},
        network=network, rng=rng,
    )
    if account_distribution:
        _distribute_frozen(state)
    return state


def _distribute_frozen(state: TrainState) -> None:
    """One-shot cloud->edge->user distribution of the frozen segments."""
    cut = state.config.cut
    scope = state.network.scope()
    for m in range(1, state.topology.num_edges + 1):
        mats = [state.model.layers[i].W for i in range(cut)]
        scope.send(
            "edge_cloud_down", "frozen_edge", 0, 0, m, 0,
            encode_matrix_set("frozen_edge", 0, 0, m, 0, mats),
        )
        for n, _g in enumerate(state.topology.users_of(m), start=1):
            scope.send(
                "user_edge_down", "frozen_user", 0, 0, m, n,
                encode_matrix_set("frozen_user", 0, 0, m, n,
                                  [state.model.layers[0].W]),
            )
    state.network.merge_round([scope])


@dataclass
class EdgeRoundResult:
    m: int
    scope: NetworkScope
    user_states: dict[tuple[int, int], AdapterState]
    edge_states: list[AdapterState]
    cloud_states: list[AdapterState]
    losses: list[float]  # ascending (n, k)
    warnings: list[str]


def _run_edge(state: TrainState, m: int, t: int) -> EdgeRoundResult:
    config = state.config
    user_seg, edge_seg, cloud_seg = state.segments
    user_layers = user_seg.layers(state.model)
    edge_layers = edge_seg.layers(state.model)
    cloud_layers = cloud_seg.layers(state.model)

    lr_u = config.tier_lr("user", t)
    lr_e = config.tier_lr("edge", t)
    lr_s = config.tier_lr("cloud", t)

    scope = state.network.scope()
    warnings: list[str] = []

    # Round-start broadcast: cloud -> edge (user + edge adapters), then
    # edge -> user (the layer-1 adapter).  Cloud replicas never leave the
    # cloud; they are instantiated in place.
    bcast_adapters = [state.global_adapters[i] for i in (1, *edge_seg.indices)]
    scope.send(
        "edge_cloud_down", "bcast_edge", t, 0, m, 0,
        encode_adapter_set("bcast_edge", t, 0, m, 0, bcast_adapters),
    )

    edge = EdgeNode(
        m, t, edge_layers,
        [AdapterState.fresh(state.global_adapters[i]) for i in edge_seg.indices],
        lr_e, config.momentum,
    )
    cloud = CloudContext(
        m, t, cloud_layers,
        [AdapterState.fresh(state.global_adapters[i]) for i in cloud_seg.indices],
        lr_s, config.momentum,
    )

    user_states: dict[tuple[int, int], AdapterState] = {}
    losses: list[float] = []
    for n, _g in enumerate(state.topology.users_of(m), start=1):
        scope.send(
            "user_edge_down", "bcast_user", t, 0, m, n,
            encode_adapter_set("bcast_user", t, 0, m, n, [state.global_adapters[1]]),
        )
        user_state = AdapterState.fresh(state.global_adapters[1])
        user_states[(m, n)] = user_state
        shard = state.plan.shards[(m, n)]
        if not shard:
            warnings.append(f"user ({m},{n}) has no local data; skipped")
            continue
        user = UserNode(m, n, user_layers, user_state, lr_u, config.momentum)
        for k in range(1, config.epochs + 1):
            stream = state.rng.derive("batch", m, n, t, k)
            picks = stream.integers(len(shard), config.batch)
            idx = [shard[int(i)] for i in picks]
            x = state.train.X[idx]
            labels = state.train.y[idx]

            act1 = user.forward_step(t, k, x, labels)
            scope.send("user_edge_up", "act_user_edge", t, k, m, n,
                       act1.encode("act_user_edge"))
            act2 = edge.forward(act1)
            scope.send("edge_cloud_up", "act_edge_cloud", t, k, m, n,
                       act2.encode("act_edge_cloud"))
            loss, grad1 = cloud.process(act2)
            scope.send("edge_cloud_down", "grad_cloud_edge", t, k, m, n,
                       grad1.encode("grad_cloud_edge"))
            grad2 = edge.backward(grad1)
            scope.send("user_edge_down", "grad_edge_user", t, k, m, n,
                       grad2.encode("grad_edge_user"))
            user.backward(grad2)
            losses.append(loss)

    # Uploads: users send their adapter to the edge, the edge relays every
    # user adapter to the cloud and uploads its own edge adapter.  Users
    # without local data trained nothing and transmit nothing.
    for n, _g in enumerate(state.topology.users_of(m), start=1):
        if not state.plan.shards[(m, n)]:
            continue
        encoded = encode_adapter_set(
            "upload_user", t, 0, m, n, [user_states[(m, n)].adapter]
        )
        scope.send("user_edge_up", "upload_user", t, 0, m, n, encoded)
        scope.send("edge_cloud_up", "upload_user", t, 0, m, n, encoded)
    scope.send(
        "edge_cloud_up", "upload_edge", t, 0, m, 0,
        encode_adapter_set("upload_edge", t, 0, m, 0,
                           [s.adapter for s in edge.states]),
    )
    return EdgeRoundResult(
        m, scope, user_states, edge.states, cloud.states, losses, warnings
    )


def _aggregate(state: TrainState, results: list[EdgeRoundResult]) -> float:
    """FedAvg barrier in ascending (m, n) order; returns the largest
    product-vs-average diagnostic across layers."""
    _, edge_seg, cloud_seg = state.segments
    by_edge = {res.m: res for res in results}

    pair_keys = [(m, n) for m, n, _ in state.topology.pairs()]
    user_entries = [
        (by_edge[m].user_states[(m, n)].adapter, state.user_weights[(m, n)])
        for m, n in pair_keys
    ]
    edge_weights = [
        sum(state.user_weights[(m, n)] for mm, n in pair_keys if mm == m)
        for m in sorted(by_edge)
    ]

    gap = 0.0
    new_globals: dict[int, LoraAdapter] = {}
    layer_sets: list[WeightedAdapterSet] = [WeightedAdapterSet(1, user_entries)]
    for offset, layer_index in enumerate(edge_seg.indices):
        entries = [
            (by_edge[m].edge_states[offset].adapter, w)
            for m, w in zip(sorted(by_edge), edge_weights)
        ]
        layer_sets.append(WeightedAdapterSet(layer_index, entries))
    for offset, layer_index in enumerate(cloud_seg.indices):
        entries = [
            (by_edge[m].cloud_states[offset].adapter, w)
            for m, w in zip(sorted(by_edge), edge_weights)
        ]
        layer_sets.append(WeightedAdapterSet(layer_index, entries))
    for adapter_set in layer_sets:
        new_globals[adapter_set.layer_index] = fedavg_adapters(adapter_set)
        gap = max(gap, product_mean_gap(adapter_set))
    state.global_adapters = new_globals
    return gap


def run_round(state: TrainState) -> RoundRecord:
    """Execute one full round across all edges and aggregate at the barrier."""
    t = state.round_index
    config = state.config
    edge_ids = list(range(1, state.topology.num_edges + 1))
    if config.parallel_edges and len(edge_ids) > 1:
        with ThreadPoolExecutor(max_workers=len(edge_ids)) as pool:
            futures = {m: pool.submit(_run_edge, state, m, t) for m in edge_ids}
            results = [futures[m].result() for m in edge_ids]
    else:
        results = [_run_edge(state, m, t) for m in edge_ids]

    state.network.merge_round([res.scope for res in results])
    for res in results:
        for message in res.warnings:
            warn_once(state, message)

    losses = [loss for res in results for loss in res.losses]
    state.step_losses.extend(losses)
    train_loss = float(np.mean(losses)) if losses else float("nan")
    gap = _aggregate(state, results)

    adapters = [state.global_adapters[i] for i in range(1, state.model.depth + 1)]
    test_loss, acc = evaluate(state.model.layers, adapters, state.test)
    state.round_index += 1
    return RoundRecord(
        round=t, loss=train_loss, acc=acc, test_loss=test_loss,
        user_bytes=state.network.tier_bytes("user"),
        edge_bytes=state.network.tier_bytes("edge"),
        cloud_bytes=state.network.tier_bytes("cloud"),
        product_gap=gap,
        time_estimate_s=state.network.time_estimate_s,
    )


def run_training(config: RunConfig) -> TrainingResult:
    """Run T rounds of the three-tier protocol and return the history."""
    state = init_state(config)
    records: list[RoundRecord] = []
    for _ in range(config.rounds):
        records.append(run_round(state))
    return TrainingResult(
        scheme="splitllm", config=config, rounds=records,
        step_losses=state.step_losses, final_adapters=state.global_adapters,
        network=state.network, warnings=state.warnings,
    )
