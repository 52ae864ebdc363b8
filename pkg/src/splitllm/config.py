"""Run configuration: file parsing, flag overrides, validation, hashing.

Config files are plain ``key = value`` lines; '#' starts a comment and
blank lines are ignored.  Lists are comma-separated.  Unknown keys are
rejected.  Command-line flags always win over file values.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .errors import ConfigError
from .model import model_dims
from .numerics import ACTIVATIONS, DTYPES

PARTITIONS = ("iid", "dirichlet")
SCHEMES = ("splitllm", "fl", "sl")
ASSIGNMENTS = ("block", "round_robin")
CLOUD_ADAPTER_POLICIES = ("per_edge",)  # "shared" is reserved, not implemented


@dataclass(frozen=True)
class RunConfig:
    # Reproducibility / precision
    seed: int = 7
    precision: str = "f32"
    # Topology
    edges: int = 5
    users: int = 20
    assignment: str = "block"
    # Model
    input_dim: int = 16
    widths: tuple[int, ...] = (96, 32, 32, 32)
    classes: int = 3
    cut: int = 3
    rank: int = 8
    init_std: float = 0.02
    activation: str = "tanh"
    frozen_std: float | None = None
    # Optimizer
    lr_user: float = 0.1
    lr_edge: float = 0.1
    lr_cloud: float = 0.1
    momentum: float = 0.9
    lr_decay: float = 0.998
    # Schedule
    rounds: int = 50
    epochs: int = 1
    batch: int = 32
    # Data
    data: str = "blobs"
    partition: str = "iid"
    beta: float = 0.5
    blob_spread: float = 0.25
    train_per_class: int = 200
    test_per_class: int = 100
    # Baseline / execution knobs
    sl_parallel_contexts: int | None = None  # None -> 1 (sequential server)
    cloud_adapter_policy: str = "per_edge"
    parallel_edges: bool = False
    schemes: tuple[str, ...] = SCHEMES
    # Optional latency model (reported wall-clock estimates only)
    link_user_edge_bps: float | None = None
    link_edge_cloud_bps: float | None = None
    link_delay_s: float = 0.0

    @property
    def depth(self) -> int:
        return len(self.widths) + 1

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def layer_dims(self) -> list[tuple[int, int]]:
        return model_dims(self.input_dim, self.widths, self.classes)

    def tier_lr(self, tier: str, round_index: int) -> float:
        """Learning rate for a tier at 1-based round t (decay once per round)."""
        base = {"user": self.lr_user, "edge": self.lr_edge, "cloud": self.lr_cloud}[tier]
        return base * self.lr_decay ** (round_index - 1)

    def validate(self) -> "RunConfig":
        problems: list[str] = []
        if not 0 <= self.seed < 2 ** 64:
            problems.append("seed: must fit in 64 unsigned bits")
        if self.precision not in DTYPES:
            problems.append(f"precision: must be one of {sorted(DTYPES)}")
        if self.edges < 1:
            problems.append("edges: must be >= 1")
        if self.users < self.edges:
            problems.append("users: must be >= edges")
        if self.assignment not in ASSIGNMENTS:
            problems.append(f"assignment: must be one of {ASSIGNMENTS}")
        if len(self.widths) < 2:
            problems.append("widths: need at least two hidden widths (depth >= 3)")
        if any(w < 2 for w in self.widths):
            problems.append("widths: every width must be >= 2")
        if self.input_dim < 1:
            problems.append("input_dim: must be >= 1")
        if self.classes < 2:
            problems.append("classes: must be >= 2")
        if not 1 < self.cut < self.depth:
            problems.append(
                f"cut: must satisfy 1 < cut < {self.depth} (cloud segment empty otherwise)"
            )
        if self.rank < 1:
            problems.append("rank: must be >= 1")
        if self.widths and self.rank >= min(self.input_dim, *self.widths):
            problems.append("rank: must be < min(input_dim, widths)")
        if self.init_std < 0:
            problems.append("init_std: must be >= 0")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation: must be one of {ACTIVATIONS}")
        if self.frozen_std is not None and self.frozen_std <= 0:
            problems.append("frozen_std: must be > 0 when given")
        for name in ("lr_user", "lr_edge", "lr_cloud"):
            if getattr(self, name) <= 0:
                problems.append(f"{name}: must be > 0")
        if not 0 <= self.momentum < 1:
            problems.append("momentum: must be in [0, 1)")
        if not 0 < self.lr_decay <= 1:
            problems.append("lr_decay: must be in (0, 1]")
        if self.rounds < 0:
            problems.append("rounds: must be >= 0")
        if self.epochs < 1:
            problems.append("epochs: must be >= 1")
        if self.batch < 1:
            problems.append("batch: must be >= 1")
        if self.partition not in PARTITIONS:
            problems.append(f"partition: must be one of {PARTITIONS}")
        if self.beta <= 0:
            problems.append("beta: must be > 0")
        if self.data == "blobs":
            if self.blob_spread <= 0:
                problems.append("blob_spread: must be > 0")
            if self.train_per_class < 1 or self.test_per_class < 1:
                problems.append("train_per_class/test_per_class: must be >= 1")
        if self.sl_parallel_contexts is not None and self.sl_parallel_contexts < 1:
            problems.append("sl_parallel_contexts: must be >= 1 when given")
        if self.cloud_adapter_policy not in CLOUD_ADAPTER_POLICIES:
            problems.append(
                "cloud_adapter_policy: only 'per_edge' is implemented "
                "('shared' is a reserved variant)"
            )
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown or not self.schemes:
            problems.append(f"schemes: must be a non-empty subset of {SCHEMES}")
        for name in ("link_user_edge_bps", "link_edge_cloud_bps"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                problems.append(f"{name}: must be > 0 when given")
        if self.link_delay_s < 0:
            problems.append("link_delay_s: must be >= 0")
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
        return self


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {text!r}")


def _parse_value(name: str, text: str):
    """Parse a raw string into the field's declared type."""
    text = text.strip()
    kind = _FIELD_KINDS[name]
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "opt_int":
            return None if text.lower() in ("none", "auto", "") else int(text)
        if kind == "opt_float":
            return None if text.lower() in ("none", "auto", "") else float(text)
        if kind == "bool":
            return _parse_bool(text)
        if kind == "int_list":
            return tuple(int(v) for v in text.split(",") if v.strip())
        if kind == "str_list":
            return tuple(v.strip() for v in text.split(",") if v.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


_FIELD_KINDS = {
    "seed": "int", "precision": "str",
    "edges": "int", "users": "int", "assignment": "str",
    "input_dim": "int", "widths": "int_list", "classes": "int", "cut": "int",
    "rank": "int", "init_std": "float", "activation": "str", "frozen_std": "opt_float",
    "lr_user": "float", "lr_edge": "float", "lr_cloud": "float",
    "momentum": "float", "lr_decay": "float",
    "rounds": "int", "epochs": "int", "batch": "int",
    "data": "str", "partition": "str", "beta": "float",
    "blob_spread": "float", "train_per_class": "int", "test_per_class": "int",
    "sl_parallel_contexts": "opt_int", "cloud_adapter_policy": "str",
    "parallel_edges": "bool", "schemes": "str_list",
    "link_user_edge_bps": "opt_float", "link_edge_cloud_bps": "opt_float",
    "link_delay_s": "float",
}


def parse_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a validated RunConfig from an optional file plus overrides.

    `overrides` values may be raw strings (parsed per field type) or
    already-typed values; they always win over the file.
    """
    values: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = (part.strip() for part in text.split("=", 1))
                if key not in _FIELD_KINDS:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _parse_value(key, raw)
    for key, val in (overrides or {}).items():
        if key not in _FIELD_KINDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, val) if isinstance(val, str) else val
    return RunConfig(**values).validate()


def config_text(config: RunConfig) -> str:
    """Canonical 'key = value' rendering (sorted keys)."""
    lines = []
    for f in sorted(fields(RunConfig), key=lambda f: f.name):
        val = getattr(config, f.name)
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def config_hash(config: RunConfig) -> str:
    """12-hex-digit digest of the canonical rendering (seed excluded, since
    the run directory name carries the seed separately)."""
    text = "\n".join(
        line
        for line in config_text(config).splitlines()
        if not line.startswith("seed =")
    )
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def with_overrides(config: RunConfig, **kwargs) -> RunConfig:
    return replace(config, **kwargs).validate()
