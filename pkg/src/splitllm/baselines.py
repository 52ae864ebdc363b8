"""Comparison trainers and the cross-scheme comparison table.

Three trainers share the three-tier run's exact data, model init, RNG
streams, and per-layer (tier-mapped) learning rates:

* ``train_centralized`` — monolithic oracle; with one edge and one user it
  reproduces the split pipeline step for step.
* ``train_fl`` — every user trains all adapters locally each round, then
  FedAvg; communication is the full adapter set up+down per user per round.
* ``train_sl`` — two-tier split at layer 1 with a single shared server-side
  adapter visited sequentially by the users; user adapters are averaged at
  round end, the server adapter persists across rounds.
"""

from __future__ import annotations

import numpy as np

from .aggregation import WeightedAdapterSet, fedavg_adapters
from .config import RunConfig, with_overrides
from .errors import ConfigError
from .metrics import RoundRecord, TrainingResult, evaluate, memory_estimate
from .model import (
    AdapterState,
    LoraAdapter,
    segment_backward,
    segment_forward,
    sgd_step,
    tier_of_layer,
)
from .numerics import softmax_cross_entropy
from .protocol import (
    Activation,
    Gradient,
    TrainState,
    UserNode,
    encode_adapter_set,
    encode_matrix_set,
    init_state,
    run_training,
    warn_once,
)


def _fresh_states(state: TrainState, indices) -> list[AdapterState]:
    return [AdapterState.fresh(state.global_adapters[i]) for i in indices]


def _batch(state: TrainState, m: int, n: int, t: int, k: int):
    shard = state.plan.shards[(m, n)]
    stream = state.rng.derive("batch", m, n, t, k)
    picks = stream.integers(len(shard), state.config.batch)
    idx = [shard[int(i)] for i in picks]
    return state.train.X[idx], state.train.y[idx]


def _full_model_step(state: TrainState, states: list[AdapterState],
                     x, labels, t: int) -> float:
    """One forward/backward/update pass over all layers; per-layer learning
    rates follow the layer's tier so single-user runs match the split path."""
    config = state.config
    layers = state.model.layers
    adapters = [s.adapter for s in states]
    logits, cache = segment_forward(layers, adapters, x)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    _, grads = segment_backward(layers, adapters, cache, dlogits)
    for idx, (adapter_state, (ga, gb)) in enumerate(zip(states, grads), start=1):
        lr = config.tier_lr(tier_of_layer(idx, config.cut), t)
        sgd_step(adapter_state, ga, gb, lr, config.momentum)
    return loss


def _record(state: TrainState, t: int, losses: list[float],
            gap: float = 0.0) -> RoundRecord:
    """Round record for a scheme without an edge tier: the user's downlink
    peer is the server, so downlink bytes are attributed to the cloud."""
    adapters = [state.global_adapters[i] for i in range(1, state.model.depth + 1)]
    test_loss, acc = evaluate(state.model.layers, adapters, state.test)
    counters = state.network.counters
    return RoundRecord(
        round=t, loss=float(np.mean(losses)) if losses else float("nan"),
        acc=acc, test_loss=test_loss,
        user_bytes=counters["user_edge_up"],
        edge_bytes=0,
        cloud_bytes=counters["user_edge_down"],
        product_gap=gap,
        time_estimate_s=state.network.time_estimate_s,
    )


def _result(scheme: str, state: TrainState, records, step_losses) -> TrainingResult:
    return TrainingResult(
        scheme=scheme, config=state.config, rounds=records,
        step_losses=step_losses, final_adapters=state.global_adapters,
        network=state.network, warnings=state.warnings,
    )


# ---------------------------------------------------------------------------
# Centralized oracle
# ---------------------------------------------------------------------------

def train_centralized(config: RunConfig) -> TrainingResult:
    """Monolithic trainer mirroring the (edges=1, users=1) split run: same
    seed-derived init, same data order, same update rules.  No wire traffic."""
    config = with_overrides(config, edges=1, users=1)
    state = init_state(config, account_distribution=False)
    records: list[RoundRecord] = []
    step_losses: list[float] = []
    for t in range(1, config.rounds + 1):
        states = _fresh_states(state, range(1, state.model.depth + 1))
        losses = []
        for k in range(1, config.epochs + 1):
            x, labels = _batch(state, 1, 1, t, k)
            losses.append(_full_model_step(state, states, x, labels, t))
        state.global_adapters = {s.adapter.layer_index: s.adapter for s in states}
        step_losses.extend(losses)
        records.append(_record(state, t, losses))
    return _result("centralized", state, records, step_losses)


# ---------------------------------------------------------------------------
# Vanilla federated baseline
# ---------------------------------------------------------------------------

def train_fl(config: RunConfig) -> TrainingResult:
    """Each user trains all L adapters locally for K epochs per round; the
    server FedAvgs over users.  The full adapter set crosses the user link
    once down and once up per user per round."""
    state = init_state(config, account_distribution=False)
    scope = state.network.scope()
    all_w = [layer.W for layer in state.model.layers]
    for m, n, _g in state.topology.pairs():
        scope.send("user_edge_down", "frozen_user", 0, 0, m, n,
                   encode_matrix_set("frozen_user", 0, 0, m, n, all_w))
    state.network.merge_round([scope])

    records: list[RoundRecord] = []
    step_losses: list[float] = []
    depth = state.model.depth
    for t in range(1, config.rounds + 1):
        scope = state.network.scope()
        per_user: dict[tuple[int, int], list[AdapterState]] = {}
        losses = []
        for m, n, _g in state.topology.pairs():
            bcast = [state.global_adapters[i] for i in range(1, depth + 1)]
            scope.send("user_edge_down", "bcast_user", t, 0, m, n,
                       encode_adapter_set("bcast_user", t, 0, m, n, bcast))
            states = _fresh_states(state, range(1, depth + 1))
            per_user[(m, n)] = states
            if not state.plan.shards[(m, n)]:
                warn_once(state, f"user ({m},{n}) has no local data; skipped")
                continue
            for k in range(1, config.epochs + 1):
                x, labels = _batch(state, m, n, t, k)
                losses.append(_full_model_step(state, states, x, labels, t))
            scope.send(
                "user_edge_up", "upload_user", t, 0, m, n,
                encode_adapter_set("upload_user", t, 0, m, n,
                                   [s.adapter for s in per_user[(m, n)]]),
            )
        state.network.merge_round([scope])
        pair_keys = [(m, n) for m, n, _ in state.topology.pairs()]
        new_globals = {}
        for layer_index in range(1, depth + 1):
            entries = [
                (per_user[key][layer_index - 1].adapter, state.user_weights[key])
                for key in pair_keys
            ]
            new_globals[layer_index] = fedavg_adapters(
                WeightedAdapterSet(layer_index, entries)
            )
        state.global_adapters = new_globals
        step_losses.extend(losses)
        records.append(_record(state, t, losses))
    return _result("fl", state, records, step_losses)


# ---------------------------------------------------------------------------
# Two-tier split baseline
# ---------------------------------------------------------------------------

def train_sl(config: RunConfig) -> TrainingResult:
    """Two-tier split at layer 1: users are served strictly sequentially by
    one shared server context holding layers 2..L.  Server adapters persist
    across rounds (momentum reset each round); user adapters are averaged."""
    state = init_state(config, account_distribution=False)
    scope = state.network.scope()
    for m, n, _g in state.topology.pairs():
        scope.send("user_edge_down", "frozen_user", 0, 0, m, n,
                   encode_matrix_set("frozen_user", 0, 0, m, n,
                                     [state.model.layers[0].W]))
    state.network.merge_round([scope])

    depth = state.model.depth
    user_layers = [state.model.layers[0]]
    server_adapters = {
        i: state.global_adapters[i].copy() for i in range(2, depth + 1)
    }

    records: list[RoundRecord] = []
    step_losses: list[float] = []
    for t in range(1, config.rounds + 1):
        scope = state.network.scope()
        server_states = [
            AdapterState.fresh(server_adapters[i]) for i in range(2, depth + 1)
        ]
        per_user: dict[tuple[int, int], AdapterState] = {}
        losses = []
        for m, n, _g in state.topology.pairs():
            scope.send("user_edge_down", "bcast_user", t, 0, m, n,
                       encode_adapter_set("bcast_user", t, 0, m, n,
                                          [state.global_adapters[1]]))
            user_state = AdapterState.fresh(state.global_adapters[1])
            per_user[(m, n)] = user_state
            if not state.plan.shards[(m, n)]:
                warn_once(state, f"user ({m},{n}) has no local data; skipped")
                continue
            user = UserNode(m, n, user_layers, user_state,
                            config.tier_lr("user", t), config.momentum)
            for k in range(1, config.epochs + 1):
                x, labels = _batch(state, m, n, t, k)
                act = user.forward_step(t, k, x, labels)
                scope.send("user_edge_up", "act_user_edge", t, k, m, n,
                           act.encode("act_user_edge"))
                loss, grad = _sl_server_step(state, server_states, act, t)
                scope.send("user_edge_down", "grad_edge_user", t, k, m, n,
                           grad.encode("grad_edge_user"))
                user.backward(grad)
                losses.append(loss)
            scope.send("user_edge_up", "upload_user", t, 0, m, n,
                       encode_adapter_set("upload_user", t, 0, m, n,
                                          [user_state.adapter]))
        state.network.merge_round([scope])

        pair_keys = [(m, n) for m, n, _ in state.topology.pairs()]
        entries = [
            (per_user[key].adapter, state.user_weights[key]) for key in pair_keys
        ]
        state.global_adapters[1] = fedavg_adapters(WeightedAdapterSet(1, entries))
        server_adapters = {s.adapter.layer_index: s.adapter for s in server_states}
        for i in range(2, depth + 1):
            state.global_adapters[i] = server_adapters[i]
        step_losses.extend(losses)
        records.append(_record(state, t, losses))
    return _result("sl", state, records, step_losses)


def _sl_server_step(state: TrainState, server_states: list[AdapterState],
                    act: Activation, t: int) -> tuple[float, Gradient]:
    config = state.config
    layers = state.model.layers[1:]
    adapters = [s.adapter for s in server_states]
    logits, cache = segment_forward(layers, adapters, act.tensor)
    loss, dlogits = softmax_cross_entropy(logits, act.labels)
    downstream, grads = segment_backward(layers, adapters, cache, dlogits)
    for idx, (adapter_state, (ga, gb)) in enumerate(zip(server_states, grads), start=2):
        lr = config.tier_lr(tier_of_layer(idx, config.cut), t)
        sgd_step(adapter_state, ga, gb, lr, config.momentum)
    return loss, Gradient(act.t, act.k, act.m, act.n, downstream)


# ---------------------------------------------------------------------------
# Comparison table
# ---------------------------------------------------------------------------

TRAINERS = {"splitllm": run_training, "fl": train_fl, "sl": train_sl}

COMPARE_FIELDS = (
    "scheme", "acc_iid", "acc_noniid", "user_comm_bytes",
    "mem_user", "mem_edge", "mem_cloud",
)


def run_scheme(scheme: str, config: RunConfig) -> TrainingResult:
    if scheme not in TRAINERS:
        raise ConfigError(f"unknown scheme {scheme!r}")
    return TRAINERS[scheme](config)


class CompareResult:
    """Rows of the comparison table plus the underlying runs."""

    def __init__(self, rows: list[dict], runs: dict[str, dict[str, TrainingResult]]):
        self.rows = rows
        self.runs = runs

    def to_csv(self) -> str:
        lines = [",".join(COMPARE_FIELDS)]
        for row in self.rows:
            lines.append(",".join(str(row[f]) for f in COMPARE_FIELDS))
        return "\n".join(lines) + "\n"

    def to_json_obj(self) -> list[dict]:
        return [{f: row[f] for f in COMPARE_FIELDS} for row in self.rows]


def compare(config: RunConfig, schemes: tuple[str, ...] | None = None) -> CompareResult:
    """Run every scheme under IID and Dirichlet partitions with shared
    dataset/seed/hyperparameters; report best accuracy per setting,
    user-side communication (from the IID run), and the per-tier memory
    model.  Schemes run sequentially so RNG streams stay independent."""
    schemes = tuple(schemes or config.schemes)
    for scheme in schemes:
        if scheme not in TRAINERS:
            raise ConfigError(f"unknown scheme {scheme!r}")
    rows = []
    runs: dict[str, dict[str, TrainingResult]] = {}
    for scheme in schemes:
        iid_run = run_scheme(scheme, with_overrides(config, partition="iid"))
        noniid_run = run_scheme(scheme, with_overrides(config, partition="dirichlet"))
        memory = memory_estimate(config, scheme)
        rows.append({
            "scheme": scheme,
            "acc_iid": iid_run.best_accuracy,
            "acc_noniid": noniid_run.best_accuracy,
            "user_comm_bytes": iid_run.network.user_side_bytes(),
            "mem_user": memory["user"]["total"],
            "mem_edge": memory["edge"]["total"],
            "mem_cloud": memory["cloud"]["total"],
        })
        runs[scheme] = {"iid": iid_run, "noniid": noniid_run}
    return CompareResult(rows, runs)
