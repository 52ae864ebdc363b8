"""Dataset synthesis, delimited-text ingestion, and user partitioning.

Dataset file layout (one sample per line): comma- or whitespace-separated
feature values followed by one integer class label.  Lines starting with
'#' and blank lines are ignored.

Partition plans map each user (m, n) to a list of sample indices into the
parent dataset; shards are always disjoint and cover every sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .rng import Rng
from .topology import Topology


@dataclass
class Dataset:
    X: np.ndarray          # (num_samples, feature_dim)
    y: np.ndarray          # (num_samples,) int labels
    class_count: int

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise DataError("dataset needs a 2-D feature matrix with >= 1 sample")
        if self.y.shape != (self.X.shape[0],):
            raise DataError("label count does not match sample count")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise DataError(f"label out of range [0, {self.class_count})")

    @property
    def num_samples(self) -> int:
        return self.X.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]


@dataclass
class PartitionPlan:
    """user (m, n) -> sample indices; disjoint and covering by construction."""

    shards: dict[tuple[int, int], list[int]]

    def sizes(self) -> dict[tuple[int, int], int]:
        return {key: len(idx) for key, idx in self.shards.items()}

    def to_json(self) -> str:
        return json.dumps(
            {f"{m}:{n}": idx for (m, n), idx in sorted(self.shards.items())}
        )

    def validate(self, num_samples: int) -> None:
        seen: list[int] = []
        for idx in self.shards.values():
            seen.extend(idx)
        if len(seen) != num_samples or len(set(seen)) != num_samples:
            raise DataError("partition shards are not disjoint and covering")
        if seen and (min(seen) < 0 or max(seen) >= num_samples):
            raise DataError("partition contains out-of-range indices")


def synth_blobs(
    class_count: int,
    dim: int,
    per_class: int,
    spread: float,
    rng: Rng,
    dtype=np.float32,
) -> Dataset:
    """Gaussian clusters around `class_count` random unit-Gaussian centers.

    Samples are laid out class-by-class, so labels are exactly balanced.
    """
    if class_count < 2:
        raise ConfigError("synth_blobs needs class_count >= 2")
    if per_class < 1:
        raise ConfigError("synth_blobs needs per_class >= 1")
    if spread < 0:
        raise ConfigError("blob spread must be >= 0")
    centers = rng.derive("centers").normals(class_count * dim).reshape(class_count, dim)
    rows = []
    for c in range(class_count):
        noise = rng.derive("samples", c).normals(per_class * dim, std=spread)
        rows.append(centers[c] + noise.reshape(per_class, dim))
    x = np.vstack(rows).astype(dtype)
    y = np.repeat(np.arange(class_count), per_class)
    return Dataset(x, y, class_count)


def blobs_fixture(
    class_count: int,
    dim: int,
    train_per_class: int,
    test_per_class: int,
    spread: float,
    rng: Rng,
    dtype=np.float32,
) -> tuple[Dataset, Dataset]:
    """Train/test pair drawn around the same centers."""
    full = synth_blobs(class_count, dim, train_per_class + test_per_class, spread, rng, dtype)
    per = train_per_class + test_per_class
    train_idx, test_idx = [], []
    for c in range(class_count):
        base = c * per
        train_idx.extend(range(base, base + train_per_class))
        test_idx.extend(range(base + train_per_class, base + per))
    train = Dataset(full.X[train_idx], full.y[train_idx], class_count)
    test = Dataset(full.X[test_idx], full.y[test_idx], class_count)
    return train, test


def save_table(dataset: Dataset, path) -> None:
    """Write the documented delimited-text layout.

    Values are rendered as shortest round-trip decimals; float32 data
    survives write -> load bit-exactly.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for row, label in zip(dataset.X, dataset.y):
            fields = ",".join(repr(float(v)) for v in row)
            fh.write(f"{fields},{int(label)}\n")


def load_table(path, class_count: int | None = None, dtype=np.float32) -> Dataset:
    """Parse a delimited-text dataset file; malformed lines report their
    line number, labels are validated against `class_count` when given."""
    rows: list[list[float]] = []
    labels: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = text.split(",") if "," in text else text.split()
            if len(fields) < 2:
                raise DataError(f"{path}:{lineno}: expected features and a label")
            try:
                feats = [float(v) for v in fields[:-1]]
                label = int(fields[-1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if rows and len(feats) != len(rows[0]):
                raise DataError(f"{path}:{lineno}: inconsistent feature count")
            if label < 0:
                raise DataError(f"{path}:{lineno}: negative label")
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise DataError(f"{path}: no samples found")
    y = np.array(labels)
    inferred = int(y.max()) + 1
    if class_count is not None and inferred > class_count:
        raise DataError(f"{path}: label {int(y.max())} >= class_count {class_count}")
    return Dataset(np.array(rows, dtype=dtype), y, class_count or inferred)


def partition_iid(dataset: Dataset, topology: Topology, rng: Rng) -> PartitionPlan:
    """Random permutation split into near-equal shards, assigned in
    ascending (m, n) order; shard sizes differ by at most one."""
    n_users = topology.num_users
    if dataset.num_samples < n_users:
        raise ConfigError(
            f"cannot split {dataset.num_samples} samples across {n_users} users"
        )
    perm = rng.derive("iid").permutation(dataset.num_samples)
    base, extra = divmod(dataset.num_samples, n_users)
    shards: dict[tuple[int, int], list[int]] = {}
    start = 0
    for rank, (m, n, _g) in enumerate(topology.pairs()):
        size = base + (1 if rank < extra else 0)
        shards[(m, n)] = [int(i) for i in perm[start : start + size]]
        start += size
    return PartitionPlan(shards)


def partition_dirichlet(
    dataset: Dataset, topology: Topology, beta: float, rng: Rng
) -> PartitionPlan:
    """Per class, draw p ~ Dirichlet(beta * 1_N) over users and assign each
    of the class's samples to a user by that categorical distribution.
    Every sample is assigned exactly once; shards may be empty."""
    if beta <= 0:
        raise ConfigError("dirichlet concentration beta must be > 0")
    n_users = topology.num_users
    order = [key[:2] for key in topology.pairs()]
    shards: dict[tuple[int, int], list[int]] = {key: [] for key in order}
    for c in range(dataset.class_count):
        stream = rng.derive("dirichlet", c)
        p = stream.dirichlet(beta, n_users)
        cum = np.cumsum(p)
        cum[-1] = 1.0  # guard against rounding in the final bin
        for idx in np.flatnonzero(dataset.y == c):
            u = stream.uniform()
            user = int(np.searchsorted(cum, u, side="right"))
            shards[order[min(user, n_users - 1)]].append(int(idx))
    return PartitionPlan(shards)
