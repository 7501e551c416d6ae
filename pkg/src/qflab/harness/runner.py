"""Config-driven experiment execution and results emission.

Seed derivations, all from the single experiment seed ``s``:

* dataset generation: ``derive_seed(s, 0, 0, TAG_DATA)``
* train/test split: ``derive_seed(s, 0, 0, TAG_SPLIT)``
* client partition: ``derive_seed(s, 0, 0, TAG_PARTITION)``
* model initialisation: ``derive_rng(s, 0, 0, TAG_INIT)``
* local training and parameter sampling: see :mod:`qflab.fedcore`
* shot sampling at evaluation: ``derive_rng(s, round, 0, TAG_EVAL)``
* QKD sessions: the experiment seed plus the link name
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..fedcore import (
    TAG_EVAL,
    TAG_INIT,
    Client,
    GlobalModel,
    RoundRecord,
    derive_rng,
    derive_seed,
)
from ..models import (
    HybridClassifier,
    LstmClassifier,
    QlstmClassifier,
    VqcClassifier,
    VqcSpec,
)
from ..satsched.graph import VisibilityGraph
from ..satsched.schedule import SecureLinks, run_sat_round
from ..topology import TopologyConfig, run_centralized, run_chained, run_hierarchical
from .config import (
    ConfigError,
    DataConfig,
    ExperimentConfig,
    ModelConfig,
    PartitionConfig,
    TopologySection,
    field_error,
)
from .data import (
    Dataset,
    PartitionSpec,
    load_csv,
    minmax_scale,
    partition_dataset,
    synth_dataset,
    train_test_split,
)
from .metrics import evaluate

TAG_DATA, TAG_SPLIT, TAG_PARTITION = 10, 11, 12
RESULTS_ENV = "QFLAB_RESULTS_DIR"

COLUMNS = (
    "round", "scope", "client", "participated", "arrived", "n_samples",
    "train_loss", "train_accuracy", "loss", "accuracy", "recall", "auc",
    "comm_seconds", "bytes_up", "bytes_down",
)


def sub_seed(seed: int, tag: int) -> int:
    return int(derive_seed(seed, 0, 0, tag).generate_state(1)[0])


@dataclass
class Outcome:
    config: ExperimentConfig
    model: object
    global_model: GlobalModel
    history: list[RoundRecord]
    train: Dataset
    test: Dataset
    shards: list[Dataset]


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Ingest or generate, scale features to [-pi, pi], then split."""
    d = cfg.data
    if d.kind == "csv":
        data = load_csv(cfg.resolve(d.path), d.label_column)
    else:
        try:
            data = synth_dataset(d.kind, d.n, sub_seed(cfg.seed, TAG_DATA), d.n_features,
                                 d.separation, d.seq_len, d.task, d.noise)
        except ValueError as exc:
            raise field_error("data", DataConfig, exc) from None
    return train_test_split(minmax_scale(data), d.test_fraction, sub_seed(cfg.seed, TAG_SPLIT))


def build_model(cfg: ExperimentConfig, data: Dataset):
    m = cfg.model
    n_classes = max(2, data.n_classes)
    noise = None if cfg.noise.channel == "none" else cfg.noise
    sequential = data.X.ndim == 3
    if m.kind in ("qlstm", "lstm") and not sequential:
        raise ConfigError("model.kind", f"{m.kind} needs sequence data")
    if m.kind in ("vqc", "hybrid") and sequential:
        raise ConfigError("model.kind", f"{m.kind} needs tabular data")
    if m.kind in ("qlstm", "lstm") and cfg.shots is not None:
        raise ConfigError("shots", "recurrent models are trained and evaluated analytically")
    if m.kind == "lstm" and noise is not None:
        raise ConfigError("noise", "the classical LSTM has no circuit to add noise to")
    spec = VqcSpec(m.n_qubits, m.n_layers)
    try:
        if m.kind == "vqc":
            if data.n_features != m.n_qubits:
                raise ConfigError("model.n_qubits",
                                  f"pure VQC encodes one feature per qubit; data has {data.n_features} features")
            return VqcClassifier(spec, n_classes, m.readout_scale, noise)
        if m.kind == "hybrid":
            return HybridClassifier(data.n_features, spec, n_classes, noise)
        if m.kind == "qlstm":
            return QlstmClassifier(data.n_features, m.hidden_dim, data.seq_len, n_classes, spec, noise)
        return LstmClassifier(data.n_features, m.hidden_dim, data.seq_len, n_classes)
    except ConfigError:
        raise
    except ValueError as exc:
        raise field_error("model", ModelConfig, exc) from None


def partition(cfg: ExperimentConfig, train: Dataset) -> list[Dataset]:
    p = cfg.partition
    try:
        spec = PartitionSpec(p.scheme, p.n_clients, sub_seed(cfg.seed, TAG_PARTITION), p.alpha,
                             p.imbalance_ratio)
        return partition_dataset(train, spec)
    except ValueError as exc:
        raise field_error("partition", PartitionConfig, exc) from None


def _evaluator(cfg: ExperimentConfig, model, test: Dataset):
    calls = [0]

    def run(params):
        rng = derive_rng(cfg.seed, calls[0], 0, TAG_EVAL) if cfg.shots else None
        calls[0] += 1
        return evaluate(model, params, test, shots=cfg.shots, rng=rng).as_dict()

    return run


def _run_satellite(cfg, clients, global_model, evaluate_fn):
    s = cfg.satellite
    try:
        graph = VisibilityGraph.from_trace(cfg.resolve(s.trace), s.ground_stations)
    except OSError as exc:
        raise ConfigError("satellite.trace", str(exc)) from None
    except ValueError as exc:
        raise ConfigError("satellite.trace", str(exc)) from None
    if s.placement is None:
        if len(clients) > len(graph.satellites):
            raise ConfigError("satellite.placement",
                              f"{len(clients)} clients but only {len(graph.satellites)} satellites")
        placement = {c.client_id: graph.satellites[i] for i, c in enumerate(clients)}
    else:
        placement = {int(k): str(v) for k, v in s.placement.items()}
        if sorted(placement) != [c.client_id for c in clients]:
            raise ConfigError("satellite.placement", "must map every client id to a satellite")
    start = graph.span[0] if s.start is None else s.start
    times = [start + r * s.round_interval for r in range(cfg.rounds)]
    for t in times:
        try:
            graph.check_time(t)
        except ValueError as exc:
            raise ConfigError("satellite.round_interval", str(exc)) from None
    secure = SecureLinks(cfg.seed, s.eavesdrop, s.tamper, s.qkd_threshold) if s.secure else None
    history = []
    for r, t0 in enumerate(times):
        try:
            global_model, record, _, _ = run_sat_round(
                clients, placement, global_model, graph, s.mode, t0, cfg.seed, r,
                cfg.local_epochs, s.overhead, secure, evaluate_fn)
        except ValueError as exc:
            raise ConfigError("satellite", str(exc)) from None
        history.append(record)
    return global_model, history


def execute(cfg: ExperimentConfig) -> Outcome:
    train, test = load_data(cfg)
    model = build_model(cfg, train)
    shards = partition(cfg, train)
    clients = [Client(i, model, s.X, s.y, lr=cfg.learning_rate, batch_size=cfg.batch_size)
               for i, s in enumerate(shards)]
    global_model = GlobalModel(model.init_params(derive_rng(cfg.seed, 0, 0, TAG_INIT)))
    evaluate_fn = _evaluator(cfg, model, test)
    top = cfg.topology
    if top.kind == "satellite":
        global_model, history = _run_satellite(cfg, clients, global_model, evaluate_fn)
    else:
        try:
            tcfg = TopologyConfig(top.kind, cfg.rounds, top.clusters, top.order)
            tcfg.validate([c.client_id for c in clients])
        except ValueError as exc:
            raise field_error("topology", TopologySection, exc) from None
        if top.kind == "centralized":
            global_model, history = run_centralized(clients, tcfg, cfg.aggregation, global_model,
                                                    cfg.local_epochs, cfg.seed, evaluate_fn)
        elif top.kind == "hierarchical":
            global_model, history = run_hierarchical(clients, tcfg, cfg.aggregation, global_model,
                                                     cfg.local_epochs, cfg.seed, evaluate_fn)
        else:
            global_model, history = run_chained(clients, tcfg, global_model, cfg.local_epochs,
                                                cfg.seed, evaluate_fn)
    return Outcome(cfg, model, global_model, history, train, test, shards)


# ---------------------------------------------------------------------------
# results file

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def result_rows(outcome: Outcome) -> list[list[str]]:
    rows = []
    n_clients = len(outcome.shards)
    for rec in outcome.history:
        arrived = set(rec.participants if rec.arrived is None else rec.arrived)
        for cid in range(n_clients):
            m = rec.client_metrics.get(cid)
            took_part = cid in rec.participants
            rows.append([rec.round, "client", cid, took_part, cid in arrived,
                         len(outcome.shards[cid]),
                         m["loss"] if m else None, m["accuracy"] if m else None,
                         None, None, None, None, None, None, None])
        g = rec.global_metrics
        rows.append([rec.round, "global", None, len(rec.participants), len(arrived),
                     len(outcome.test), None, None, g.get("loss"), g.get("accuracy"),
                     g.get("recall"), g.get("auc"), float(rec.comm_seconds), rec.bytes_up,
                     rec.bytes_down])
    return [[_cell(v) for v in row] for row in rows]


def summary(outcome: Outcome) -> dict:
    cfg, hist = outcome.config, outcome.history
    return {
        "name": cfg.name,
        "seed": cfg.seed,
        "rounds": cfg.rounds,
        "topology": cfg.topology.kind,
        "aggregation": cfg.aggregation.kind,
        "model": cfg.model.kind,
        "n_params": int(outcome.global_model.params.size),
        "n_clients": len(outcome.shards),
        "n_train": len(outcome.train),
        "n_test": len(outcome.test),
        "final": hist[-1].global_metrics if hist else None,
        "bytes_up": int(sum(r.bytes_up for r in hist)),
        "bytes_down": int(sum(r.bytes_down for r in hist)),
        "comm_seconds": float(sum(r.comm_seconds for r in hist)),
    }


def results_dir(cfg: ExperimentConfig) -> Path:
    override = os.environ.get(RESULTS_ENV)
    return Path(override) if override else cfg.resolve(cfg.output_dir)


def write_results(outcome: Outcome, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{outcome.config.name}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        writer.writerows(result_rows(outcome))
        fh.write("# summary " + json.dumps(summary(outcome), sort_keys=True) + "\n")
    np.save(out_dir / f"{outcome.config.name}.params.npy", outcome.global_model.params)
    return path


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[Path] = None) -> Path:
    """Run the configured experiment and return the path of its results CSV."""
    outcome = execute(cfg)
    return write_results(outcome, Path(out_dir) if out_dir is not None else results_dir(cfg))
