"""Experiment configuration: YAML file -> validated dataclasses."""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from ..fedcore import AggregationStrategy
from ..qsim import NoiseSpec
from ..satsched.schedule import DEFAULT_SECURITY_OVERHEAD, MODES
from ..satsched.security import QBER_ABORT_THRESHOLD

MODEL_KINDS = ("vqc", "hybrid", "qlstm", "lstm")
TOPOLOGY_KINDS = ("centralized", "hierarchical", "chained", "satellite")


class ConfigError(ValueError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


@dataclass
class DataConfig:
    kind: str = "blobs"  # blobs | sequence | csv
    n: int = 500
    n_features: int = 4
    separation: float = 6.0
    seq_len: int = 4
    task: str = "sinusoid"
    noise: float = 0.1
    path: Optional[str] = None
    label_column: str = "label"
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in ("blobs", "sequence", "csv"):
            raise ValueError(f"unknown data kind {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ValueError("csv data needs a path")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass
class PartitionConfig:
    scheme: str = "iid"
    n_clients: int = 5
    alpha: float = 0.5
    imbalance_ratio: float = 10.0


@dataclass
class ModelConfig:
    kind: str = "vqc"
    n_qubits: int = 4
    n_layers: int = 2
    hidden_dim: int = 2
    readout_scale: float = 3.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if not 1 <= self.n_qubits <= 14:
            raise ValueError("n_qubits must lie in [1, 14]")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")


@dataclass
class TopologySection:
    kind: str = "centralized"
    clusters: Optional[list] = None
    order: Optional[list] = None

    def __post_init__(self):
        if self.kind not in TOPOLOGY_KINDS:
            raise ValueError(f"unknown topology kind {self.kind!r}; expected one of {TOPOLOGY_KINDS}")


@dataclass
class SatelliteConfig:
    trace: str = ""
    ground_stations: Optional[list] = None
    placement: Optional[dict] = None  # client id -> satellite
    mode: str = "simultaneous"
    start: Optional[float] = None
    round_interval: float = 60.0
    secure: bool = True
    overhead: float = DEFAULT_SECURITY_OVERHEAD
    eavesdrop: dict = field(default_factory=dict)  # "A|B" -> flip rate
    tamper: list = field(default_factory=list)
    qkd_threshold: float = QBER_ABORT_THRESHOLD

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown transfer mode {self.mode!r}")
        if self.round_interval <= 0:
            raise ValueError("round_interval must be > 0")
        if self.overhead < 0:
            raise ValueError("overhead must be >= 0")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    rounds: int = 10
    local_epochs: int = 1
    learning_rate: float = 0.1
    batch_size: int = 16
    shots: Optional[int] = None
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    topology: TopologySection = field(default_factory=TopologySection)
    aggregation: AggregationStrategy = field(default_factory=AggregationStrategy)
    satellite: Optional[SatelliteConfig] = None
    output_dir: str = "results"
    base_dir: str = "."  # directory relative paths resolve against

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


_SECTIONS = {
    "noise": NoiseSpec,
    "data": DataConfig,
    "partition": PartitionConfig,
    "model": ModelConfig,
    "topology": TopologySection,
    "aggregation": AggregationStrategy,
    "satellite": SatelliteConfig,
}


def _build(cls, values: Any, where: str):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(where, "expected a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown field")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise field_error(where, cls, exc) from None


def field_error(where: str, cls, exc: Exception) -> ConfigError:
    """ConfigError blaming the first field of ``cls`` named in the message of ``exc``."""
    fields = {f.name for f in dataclasses.fields(cls)}
    message = str(exc)
    names = [m.group() for m in re.finditer(r"[A-Za-z_]+", message) if m.group() in fields]
    if not names:
        return ConfigError(where or "config", message)
    return ConfigError(f"{where}.{names[0]}" if where else names[0], message)


def config_from_dict(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")
    top = dict(raw)
    for name, cls in _SECTIONS.items():
        if name in top and top[name] is not None:
            top[name] = _build(cls, top[name], name)
    top.setdefault("base_dir", base_dir)
    cfg = _build(ExperimentConfig, top, "")
    if cfg.topology.kind == "satellite":
        if cfg.satellite is None or not cfg.satellite.trace:
            raise ConfigError("satellite.trace", "satellite topology needs a trace file")
    if cfg.topology.kind == "hierarchical" and cfg.aggregation.kind == "sampled_merge":
        raise ConfigError("aggregation.kind", "sampled_merge needs the centralized topology")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"invalid YAML in {path}: {exc}") from None
    raw = raw or {}
    raw.setdefault("name", path.stem)
    return config_from_dict(raw, base_dir=str(path.parent))
