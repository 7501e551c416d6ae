"""Datasets from a generator or a CSV file, plus client partitioning."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np


class IngestionError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray  # (rows, features) or (rows, seq_len, features)
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} labels")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("features must be finite")

    def __len__(self):
        return int(self.y.shape[0])

    @property
    def seq_len(self) -> Optional[int]:
        return self.X.shape[1] if self.X.ndim == 3 else None

    @property
    def n_features(self) -> int:
        return self.X.shape[-1]

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1 if len(self) else 0

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.y[idx])


def synth_dataset(kind: str, n: int, seed: int, n_features: int = 4, separation: float = 6.0,
                  seq_len: int = 4, task: str = "sinusoid", noise: float = 0.1) -> Dataset:
    """Seeded synthetic data.

    ``blobs``: two unit-variance Gaussian clusters whose means sit
    ``separation`` standard deviations apart along the all-ones direction.
    ``sequence``: ``task="sinusoid"`` gives noisy sine windows labelled by
    whether the next (unseen) value rises; ``task="parity"`` gives random
    bit sequences labelled by their parity.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    rng = np.random.default_rng(seed)
    if kind == "blobs":
        if not 1 <= n_features:
            raise ValueError("n_features must be >= 1")
        y = rng.permutation(np.arange(n) % 2)
        direction = np.ones(n_features) / np.sqrt(n_features)
        centers = np.where(y[:, None] == 1, 0.5, -0.5) * separation * direction
        return Dataset(centers + rng.standard_normal((n, n_features)), y)
    if kind == "sequence":
        if task == "sinusoid":
            omega = rng.uniform(0.3, 1.5, n)
            phase = rng.uniform(0, 2 * np.pi, n)
            t = np.arange(seq_len + 1)
            clean = np.sin(omega[:, None] * t[None, :] + phase[:, None])
            y = (clean[:, seq_len] > clean[:, seq_len - 1]).astype(int)
            X = clean[:, :seq_len, None] + noise * rng.standard_normal((n, seq_len, n_features))
            return Dataset(X, y)
        if task == "parity":
            bits = rng.integers(0, 2, (n, seq_len))
            X = np.repeat(bits[:, :, None], n_features, axis=2).astype(float)
            return Dataset(X, bits.sum(axis=1) % 2)
        raise ValueError(f"unknown sequence task {task!r}")
    raise ValueError(f"unknown dataset kind {kind!r}")


def load_csv(path, label_column: str) -> Dataset:
    """Header row first; ``label_column`` holds integer labels, all else numeric."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if label_column not in header:
            raise IngestionError(f"{path}: no label column {label_column!r} in header {header}")
        li = header.index(label_column)
        rows, labels = [], []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
            values = []
            for c, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {r}, column {header[c]!r}: non-numeric value {cell!r}"
                    ) from None
                if not np.isfinite(v):
                    raise IngestionError(f"{path}: row {r}, column {header[c]!r}: non-finite value")
                values.append(v)
            label = values.pop(li)
            if label != int(label) or label < 0:
                raise IngestionError(f"{path}: row {r}: label {label!r} is not a non-negative integer")
            rows.append(values)
            labels.append(int(label))
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    return Dataset(np.array(rows), np.array(labels))


def minmax_scale(data: Dataset, lo: float = -np.pi, hi: float = np.pi) -> Dataset:
    """Per-feature min-max map into ``[lo, hi]``; constant features map to the midpoint."""
    flat = data.X.reshape(-1, data.n_features)
    mn, mx = flat.min(axis=0), flat.max(axis=0)
    span = np.where(mx > mn, mx - mn, 1.0)
    unit = np.where(mx > mn, (data.X - mn) / span, 0.5)
    return Dataset(lo + (hi - lo) * unit, data.y.copy())


def train_test_split(data: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(data))
    n_test = max(1, int(round(test_fraction * len(data))))
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))


# ---------------------------------------------------------------------------
# partitioning

SCHEMES = ("iid", "dirichlet", "long_tail")
MAX_DIRICHLET_DRAWS = 100


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "iid"
    n_clients: int = 5
    seed: int = 0
    alpha: float = 0.5
    imbalance_ratio: float = 10.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.imbalance_ratio < 1:
            raise ValueError("imbalance_ratio must be >= 1")


def _iid(n: int, k: int, rng) -> list[np.ndarray]:
    return [np.sort(part) for part in np.array_split(rng.permutation(n), k)]


def _dirichlet(y: np.ndarray, k: int, alpha: float, rng) -> list[np.ndarray]:
    classes = np.unique(y)
    for _ in range(MAX_DIRICHLET_DRAWS):
        shards = [[] for _ in range(k)]
        for c in classes:
            idx = rng.permutation(np.flatnonzero(y == c))
            props = rng.dirichlet(np.full(k, alpha))
            cuts = np.round(np.cumsum(props)[:-1] * idx.size).astype(int)
            for j, part in enumerate(np.split(idx, cuts)):
                shards[j].extend(part.tolist())
        if all(shards):
            return [np.sort(np.array(s, dtype=int)) for s in shards]
    raise ValueError(f"could not give every client data with alpha={alpha}; use fewer clients")


def _long_tail(y: np.ndarray, k: int, ratio: float, rng) -> list[np.ndarray]:
    # client j ranks classes starting at class j mod C; the class at rank r
    # gets weight ratio**(-r/(C-1)), so head/tail frequency ratio = ratio
    classes = np.unique(y)
    n_cls = classes.size
    decay = np.ones(n_cls) if n_cls == 1 else ratio ** (-np.arange(n_cls) / (n_cls - 1))
    weight = np.empty((k, n_cls))
    for j in range(k):
        weight[j] = np.roll(decay, j % n_cls)
    shards = [[] for _ in range(k)]
    for ci, c in enumerate(classes):
        idx = rng.permutation(np.flatnonzero(y == c))
        props = weight[:, ci] / weight[:, ci].sum()
        owners = rng.choice(k, size=idx.size, p=props)
        for j in range(k):
            shards[j].extend(idx[owners == j].tolist())
    return [np.sort(np.array(s, dtype=int)) for s in shards]


def partition_indices(y, spec: PartitionSpec) -> list[np.ndarray]:
    y = np.asarray(y, dtype=int)
    if spec.n_clients > y.size:
        raise ValueError(f"n_clients {spec.n_clients} exceeds the {y.size} available rows")
    rng = np.random.default_rng(spec.seed)
    if spec.scheme == "iid":
        return _iid(y.size, spec.n_clients, rng)
    if spec.scheme == "dirichlet":
        return _dirichlet(y, spec.n_clients, spec.alpha, rng)
    return _long_tail(y, spec.n_clients, spec.imbalance_ratio, rng)


def partition_dataset(data: Dataset, spec: PartitionSpec) -> list[Dataset]:
    return [data.subset(idx) for idx in partition_indices(data.y, spec)]


def label_tv_distances(shards: list[Dataset], reference: Dataset) -> np.ndarray:
    """Total-variation distance of each shard's label histogram from the reference."""
    n_cls = reference.n_classes
    ref = np.bincount(reference.y, minlength=n_cls) / len(reference)
    out = []
    for s in shards:
        hist = np.bincount(s.y, minlength=n_cls) / max(len(s), 1)
        out.append(0.5 * np.abs(hist - ref).sum())
    return np.array(out)
