"""Multi-round training over a chosen federation topology."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .fedcore import (
    AggregationStrategy,
    Client,
    Evaluator,
    GlobalModel,
    ModelUpdate,
    RoundRecord,
    TAG_TRAIN,
    aggregate_dense,
    derive_rng,
    fedavg,
    run_round,
    train_clients,
)

TOPOLOGIES = ("centralized", "hierarchical", "chained")


@dataclass
class TopologyConfig:
    kind: str = "centralized"
    rounds: int = 1
    clusters: Optional[list] = None  # hierarchical: list of client-id lists, one per edge server
    order: Optional[list] = None  # chained: client ids in visiting order

    def __post_init__(self):
        if self.kind not in TOPOLOGIES:
            raise ValueError(f"unknown topology kind {self.kind!r}")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")

    def validate(self, client_ids: Sequence[int]) -> None:
        ids = list(client_ids)
        if not ids:
            raise ValueError("topology needs at least one client")
        if self.kind == "hierarchical":
            if not self.clusters:
                raise ValueError("hierarchical topology needs clusters")
            if any(len(c) == 0 for c in self.clusters):
                raise ValueError("clusters must not be empty")
            flat = [i for c in self.clusters for i in c]
            if sorted(flat) != sorted(ids) or len(set(flat)) != len(flat):
                raise ValueError("clusters must hold every client exactly once")
        elif self.kind == "chained":
            order = ids if self.order is None else list(self.order)
            if len(set(order)) != len(order):
                raise ValueError("order lists a client more than once")
            if sorted(order) != sorted(ids):
                raise ValueError("order must be a permutation of all clients")


def run_centralized(clients: Sequence[Client], config: TopologyConfig, strategy: AggregationStrategy,
                    global_model: GlobalModel, local_epochs: int = 1, seed: int = 0,
                    evaluate: Optional[Evaluator] = None) -> tuple[GlobalModel, list[RoundRecord]]:
    config.validate([c.client_id for c in clients])
    history = []
    for r in range(config.rounds):
        global_model, record = run_round(clients, global_model, strategy, local_epochs, seed,
                                         round_index=r, evaluate=evaluate)
        history.append(record)
    return global_model, history


def run_hierarchical(clients: Sequence[Client], config: TopologyConfig, strategy: AggregationStrategy,
                     global_model: GlobalModel, local_epochs: int = 1, seed: int = 0,
                     evaluate: Optional[Evaluator] = None) -> tuple[GlobalModel, list[RoundRecord]]:
    """Edge servers average their cluster, the cloud averages edge models.

    Edge models are weighted by their cluster's total sample count, so the
    cloud result is the flat sample-weighted mean over all clients.
    """
    if strategy.kind == "sampled_merge":
        raise ValueError("sampled_merge is only defined for the centralized topology")
    by_id = {c.client_id: c for c in clients}
    config.validate(list(by_id))
    history = []
    for r in range(config.rounds):
        ordered = [by_id[i] for cluster in config.clusters for i in cluster]
        metrics, down = train_clients(ordered, global_model, local_epochs, seed, r)
        edge_updates, up = [], 0
        for e, cluster in enumerate(config.clusters):
            members = [by_id[i] for i in cluster]
            updates = [m.dense_update(metrics[m.client_id]) for m in members]
            up += sum(u.payload_bytes() for u in updates)
            edge_updates.append(ModelUpdate(-1 - e, aggregate_dense(updates, strategy.kind),
                                            sum(m.n_samples for m in members)))
        global_model = GlobalModel(fedavg(edge_updates), global_model.version + 1)
        history.append(RoundRecord(
            round=r,
            participants=[c.client_id for c in ordered],
            client_metrics=metrics,
            global_metrics=evaluate(global_model.params) if evaluate else {},
            bytes_up=up,
            bytes_down=down,
        ))
    return global_model, history


def run_chained(clients: Sequence[Client], config: TopologyConfig, global_model: GlobalModel,
                local_epochs: int = 1, seed: int = 0,
                evaluate: Optional[Evaluator] = None) -> tuple[GlobalModel, list[RoundRecord]]:
    """Serverless relay: each client trains the model it receives and hands it on.

    One traversal of ``config.order`` is a pass; ``config.rounds`` passes run.
    """
    by_id = {c.client_id: c for c in clients}
    config.validate(list(by_id))
    order = list(by_id) if config.order is None else list(config.order)
    params = global_model.params.copy()
    history = []
    for p in range(config.rounds):
        metrics, moved = {}, 0
        for cid in order:
            client = by_id[cid]
            client.params = params.copy()
            metrics[cid] = client.train(local_epochs, derive_rng(seed, p, cid, TAG_TRAIN))
            params = client.params.copy()
            moved += params.size * 8
        global_model = GlobalModel(params, global_model.version + 1)
        history.append(RoundRecord(
            round=p,
            participants=order,
            client_metrics=metrics,
            global_metrics=evaluate(params) if evaluate else {},
            bytes_up=moved,
            bytes_down=0,
            aggregated=False,
        ))
    return global_model, history
