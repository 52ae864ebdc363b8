"""Deterministic desk-scale simulator for three-tier split learning with
low-rank adapter exchange and FedAvg aggregation."""

from .aggregation import WeightedAdapterSet, compute_weights, fedavg_adapters
from .baselines import compare, train_centralized, train_fl, train_sl
from .config import RunConfig, parse_config, with_overrides
from .data import Dataset, PartitionPlan, load_table, partition_dirichlet, partition_iid, synth_blobs
from .metrics import evaluate, memory_estimate, peak_memory_reduction
from .model import LayeredModel, LoraAdapter, build_model, partition_model
from .protocol import SimNetwork, init_state, run_round, run_training
from .rng import Rng
from .topology import Topology

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "LayeredModel",
    "LoraAdapter",
    "PartitionPlan",
    "Rng",
    "RunConfig",
    "SimNetwork",
    "Topology",
    "WeightedAdapterSet",
    "build_model",
    "compare",
    "compute_weights",
    "evaluate",
    "fedavg_adapters",
    "init_state",
    "load_table",
    "memory_estimate",
    "parse_config",
    "partition_dirichlet",
    "partition_iid",
    "partition_model",
    "peak_memory_reduction",
    "run_round",
    "run_training",
    "synth_blobs",
    "train_centralized",
    "train_fl",
    "train_sl",
    "with_overrides",
    "__version__",
]
