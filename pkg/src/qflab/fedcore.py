"""Client/server round machinery and aggregation rules."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .models import class_scores, loss_and_dlogits, sgd_step

logger = logging.getLogger(__name__)

FLOAT_BYTES = 8
INDEX_BYTES = 4

STRATEGIES = ("fedavg", "accuracy_weighted", "sampled_merge")


class AllZeroAccuracyError(ValueError):
    """Every client reported accuracy 0; the caller should fall back to FedAvg."""


def derive_seed(seed: int, *path: int) -> np.random.SeedSequence:
    """Deterministic child seed for (experiment seed, round, client, purpose...)."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(p) & 0xFFFFFFFF for p in path]])


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *path))


# stream tags so that different uses of the same (round, client) never collide
TAG_TRAIN, TAG_UPLINK, TAG_DOWNLINK, TAG_INIT, TAG_EVAL = 1, 2, 3, 4, 5


@dataclass
class ModelUpdate:
    client_id: int
    params: np.ndarray  # dense vector, or the values at `indices` when sparse
    n_samples: int
    reported_accuracy: float = 0.0
    indices: Optional[np.ndarray] = None
    length: Optional[int] = None  # full model length (required for sparse)

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        if self.n_samples < 0:
            raise ValueError("n_samples must be non-negative")
        if not 0.0 <= self.reported_accuracy <= 1.0:
            raise ValueError("reported_accuracy must lie in [0, 1]")
        if self.indices is None:
            self.length = self.params.size if self.length is None else self.length
            return
        self.indices = np.asarray(self.indices, dtype=int)
        if self.length is None:
            raise ValueError("sparse updates must state the full model length")
        if self.indices.shape != self.params.shape:
            raise ValueError("sparse indices and values differ in length")
        if self.indices.size and (np.any(np.diff(self.indices) <= 0)
                                  or self.indices[0] < 0 or self.indices[-1] >= self.length):
            raise ValueError("sparse indices must be strictly increasing and in range")

    @property
    def is_sparse(self) -> bool:
        return self.indices is not None

    def payload_bytes(self) -> int:
        # a sample covering every index needs no index list on the wire
        if self.is_sparse and self.indices.size < self.length:
            return self.indices.size * (FLOAT_BYTES + INDEX_BYTES)
        return self.params.size * FLOAT_BYTES


@dataclass
class GlobalModel:
    params: np.ndarray
    version: int = 0
    # sparse broadcast produced by the last sampled merge: (indices, values)
    downlink: Optional[tuple] = None


@dataclass
class AggregationStrategy:
    kind: str = "fedavg"
    sample_fraction_up: float = 0.5
    sample_fraction_down: float = 0.5

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown aggregation kind {self.kind!r}")
        for name in ("sample_fraction_up", "sample_fraction_down"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")


@dataclass
class RoundRecord:
    round: int
    participants: list
    client_metrics: dict = field(default_factory=dict)  # id -> {"loss", "accuracy", "n_samples"}
    global_metrics: dict = field(default_factory=dict)
    bytes_up: int = 0
    bytes_down: int = 0
    comm_seconds: float = 0.0
    arrived: Optional[list] = None
    aggregated: bool = True


# ---------------------------------------------------------------------------
# aggregation

def _stack_dense(updates: Sequence[ModelUpdate]) -> np.ndarray:
    if not updates:
        raise ValueError("no updates to aggregate")
    if any(u.is_sparse for u in updates):
        raise ValueError("dense aggregation received a sparse update")
    lengths = {u.params.size for u in updates}
    if len(lengths) != 1:
        raise ValueError(f"updates have differing lengths {sorted(lengths)}")
    return np.stack([u.params for u in updates])


def weighted_sum(vectors: np.ndarray, weights) -> np.ndarray:
    """Accumulate ``sum_k weights[k] * vectors[k]`` in row order.

    ``weights`` may be one scalar per row or a per-entry array.  The fixed
    accumulation order keeps results bitwise reproducible across callers.
    """
    acc = np.zeros(vectors.shape[1:])
    for k in range(vectors.shape[0]):
        acc = acc + weights[k] * vectors[k]
    return acc


def fedavg(updates: Sequence[ModelUpdate]) -> np.ndarray:
    vecs = _stack_dense(updates)
    counts = np.array([u.n_samples for u in updates], dtype=float)
    total = counts.sum()
    if total == 0:
        weights = np.full(len(updates), 1.0 / len(updates))
    else:
        weights = counts / total
    return weighted_sum(vecs, weights)


def accuracy_weights(updates: Sequence[ModelUpdate]) -> np.ndarray:
    acc = np.array([u.reported_accuracy for u in updates], dtype=float)
    total = acc.sum()
    if total <= 0:
        raise AllZeroAccuracyError("all reported accuracies are zero")
    return acc / total


def accuracy_weighted_aggregate(updates: Sequence[ModelUpdate]) -> np.ndarray:
    vecs = _stack_dense(updates)
    return weighted_sum(vecs, accuracy_weights(updates))


def _n_sampled(fraction: float, length: int) -> int:
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"sample fraction must lie in (0, 1], got {fraction}")
    return min(length, math.ceil(fraction * length))


def sample_indices(length: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    k = _n_sampled(fraction, length)
    return np.sort(rng.choice(length, size=k, replace=False))


def sample_update(params, fraction: float, seed, client_id: int = 0, n_samples: int = 0,
                  reported_accuracy: float = 0.0) -> ModelUpdate:
    """Sparse upload of ``ceil(fraction * len)`` uniformly chosen entries.

    ``seed`` is an int or a SeedSequence; callers derive it per client.
    """
    params = np.asarray(params, dtype=float)
    idx = sample_indices(params.size, fraction, np.random.default_rng(seed))
    return ModelUpdate(client_id, params[idx], n_samples, reported_accuracy,
                       indices=idx, length=params.size)


def merge_sparse(global_model: GlobalModel, updates: Sequence[ModelUpdate], fraction_down: float,
                 seed) -> tuple[GlobalModel, tuple]:
    """Per-index sample-weighted mean over reporting clients.

    Unreported entries keep the old value.  Where every reporter of an index
    holds zero samples the plain mean is used, mirroring :func:`fedavg`.

    Returns the new global model and the downlink ``(indices, values)``, a
    single sample shared by every client.
    """
    if not updates:
        raise ValueError("no updates to merge")
    length = global_model.params.size
    mask = np.zeros((len(updates), length))
    values = np.zeros((len(updates), length))
    for k, u in enumerate(updates):
        if u.length != length:
            raise ValueError(f"update from client {u.client_id} has length {u.length}, model has {length}")
        idx = u.indices if u.is_sparse else np.arange(length)
        mask[k, idx] = 1.0
        values[k, idx] = u.params
    mass = mask * np.array([u.n_samples for u in updates], dtype=float)[:, None]
    totals, counts = mass.sum(axis=0), mask.sum(axis=0)
    reported = counts > 0
    weights = np.where(totals > 0, mass / np.where(totals > 0, totals, 1.0),
                       mask / np.where(reported, counts, 1.0))
    merged = np.where(reported, weighted_sum(values, weights), global_model.params)
    down_idx = sample_indices(length, fraction_down, np.random.default_rng(seed))
    new = GlobalModel(merged, global_model.version + 1, (down_idx, merged[down_idx].copy()))
    return new, new.downlink


# ---------------------------------------------------------------------------
# clients and rounds

@dataclass
class Client:
    client_id: int
    model: object
    X: np.ndarray
    y: np.ndarray
    lr: float = 0.1
    batch_size: int = 16
    params: Optional[np.ndarray] = None  # local copy; set on first broadcast
    train_calls: int = 0

    @property
    def n_samples(self) -> int:
        return int(len(self.y))

    def receive(self, global_model: GlobalModel) -> None:
        if self.params is None or global_model.downlink is None:
            self.params = global_model.params.copy()
            return
        idx, vals = global_model.downlink
        self.params = self.params.copy()
        self.params[idx] = vals

    def train(self, epochs: int, rng: np.random.Generator) -> dict:
        """Mini-batch SGD over the local shard; returns loss/accuracy after training."""
        self.train_calls += 1
        params = self.params
        n = self.n_samples
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                batch = order[start:start + self.batch_size]
                _, grad = self.model.loss_and_grad(params, self.X[batch], self.y[batch])
                params = sgd_step(params, grad, self.lr)
        self.params = params
        return self.local_metrics()

    def local_metrics(self) -> dict:
        if self.n_samples == 0:
            return {"loss": float("nan"), "accuracy": 0.0, "n_samples": 0}
        logits = self.model.logits(self.params, self.X)
        loss, _ = loss_and_dlogits(logits, self.y, self.model.n_classes)
        pred, _ = class_scores(logits, self.model.n_classes)
        return {"loss": loss, "accuracy": float(np.mean(pred == self.y)), "n_samples": self.n_samples}

    def dense_update(self, metrics: dict) -> ModelUpdate:
        return ModelUpdate(self.client_id, self.params.copy(), self.n_samples, metrics["accuracy"])


Evaluator = Callable[[np.ndarray], dict]


def aggregate_dense(updates: Sequence[ModelUpdate], kind: str) -> np.ndarray:
    if kind == "accuracy_weighted":
        try:
            return accuracy_weighted_aggregate(updates)
        except AllZeroAccuracyError:
            logger.warning("all client accuracies are zero; falling back to FedAvg")
    return fedavg(updates)


def broadcast_bytes(global_model: GlobalModel) -> int:
    if global_model.downlink is None:
        return global_model.params.size * FLOAT_BYTES
    idx = global_model.downlink[0]
    if idx.size == global_model.params.size:
        return idx.size * FLOAT_BYTES
    return idx.size * (FLOAT_BYTES + INDEX_BYTES)


def train_clients(clients: Sequence[Client], global_model: GlobalModel, local_epochs: int,
                  seed: int, round_index: int) -> tuple[dict, int]:
    """Broadcast, then train every client; returns (metrics by id, bytes sent down)."""
    metrics, down = {}, 0
    for c in clients:
        c.receive(global_model)
        down += broadcast_bytes(global_model)
        metrics[c.client_id] = c.train(local_epochs, derive_rng(seed, round_index, c.client_id, TAG_TRAIN))
    return metrics, down


def run_round(clients: Sequence[Client], global_model: GlobalModel, strategy: AggregationStrategy,
              local_epochs: int, seed: int, round_index: Optional[int] = None,
              evaluate: Optional[Evaluator] = None) -> tuple[GlobalModel, RoundRecord]:
    if not clients:
        raise ValueError("a round needs at least one client")
    r = global_model.version if round_index is None else round_index
    metrics, down = train_clients(clients, global_model, local_epochs, seed, r)

    if strategy.kind == "sampled_merge":
        updates = [
            sample_update(c.params, strategy.sample_fraction_up,
                          derive_seed(seed, r, c.client_id, TAG_UPLINK), c.client_id,
                          c.n_samples, metrics[c.client_id]["accuracy"])
            for c in clients
        ]
        new, _ = merge_sparse(global_model, updates, strategy.sample_fraction_down,
                              derive_seed(seed, r, 0, TAG_DOWNLINK))
    else:
        updates = [c.dense_update(metrics[c.client_id]) for c in clients]
        new = GlobalModel(aggregate_dense(updates, strategy.kind), global_model.version + 1)

    record = RoundRecord(
        round=r,
        participants=[c.client_id for c in clients],
        client_metrics=metrics,
        global_metrics=evaluate(new.params) if evaluate else {},
        bytes_up=sum(u.payload_bytes() for u in updates),
        bytes_down=down,
    )
    return new, record
