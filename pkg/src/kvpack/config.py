"""Strict JSON run configuration.

Sections: ``cluster``, ``scheduler``, ``migration``, ``workload``,
``sim``; every key is known and type-checked, unknown keys are rejected,
and the document carries a ``schema_version``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

from .errors import ConfigError

SCHEMA_VERSION = 1

SCHEDULER_KINDS = ("mell", "bf", "wf", "lb")


@dataclass(frozen=True)
class ClusterConfig:
    capacity_bytes: int = 120_000
    gpus_per_machine: int = 4
    max_gpus: int = 1024
    intra_bandwidth_bytes_per_s: float = 50e9
    inter_bandwidth_bytes_per_s: float = 1.25e9
    prefill_tokens_per_s: float = 10_000.0

    def __post_init__(self):
        if self.capacity_bytes <= 0:
            raise ConfigError("cluster.capacity_bytes must be > 0")
        if self.gpus_per_machine < 1:
            raise ConfigError("cluster.gpus_per_machine must be >= 1")
        if self.max_gpus < 1:
            raise ConfigError("cluster.max_gpus must be >= 1")
        for name in ("intra_bandwidth_bytes_per_s",
                     "inter_bandwidth_bytes_per_s", "prefill_tokens_per_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"cluster.{name} must be > 0")


@dataclass(frozen=True)
class SchedulerConfig:
    kind: str = "mell"
    batching: bool = True
    weight_free_mem: float = 1.0
    weight_request_count: float = 0.25
    weight_same_machine: float = 0.5
    rebalance_period: int = 1
    imbalance_threshold: float = 0.25

    def __post_init__(self):
        if self.kind not in SCHEDULER_KINDS:
            raise ConfigError(
                f"scheduler.kind must be one of {SCHEDULER_KINDS}")
        for name in ("weight_free_mem", "weight_request_count",
                     "weight_same_machine"):
            if getattr(self, name) < 0:
                raise ConfigError(f"scheduler.{name} must be >= 0")
        if self.rebalance_period < 1:
            raise ConfigError("scheduler.rebalance_period must be >= 1")
        if not 0.0 < self.imbalance_threshold < 1.0:
            raise ConfigError(
                "scheduler.imbalance_threshold must be in (0, 1)")


@dataclass(frozen=True)
class MigrationConfig:
    epoch_seconds: float = 1.0
    budget_fraction: float = 0.2
    max_defer: int = 3

    def __post_init__(self):
        if self.epoch_seconds <= 0:
            raise ConfigError("migration.epoch_seconds must be > 0")
        if not 0.0 < self.budget_fraction <= 1.0:
            raise ConfigError("migration.budget_fraction must be in (0, 1]")
        if self.max_defer < 0:
            raise ConfigError("migration.max_defer must be >= 0")


@dataclass(frozen=True)
class WorkloadConfig:
    trace_path: Optional[str] = None
    mean_interarrival_slots: float = 0.5
    duration_slots: int = 200
    prompt_mean_log: float = 4.6
    prompt_sigma_log: float = 0.8
    response_mean_log: float = 5.3
    response_sigma_log: float = 0.9
    scale: int = 1
    kv_bytes_per_token: int = 100

    def __post_init__(self):
        if self.mean_interarrival_slots <= 0:
            raise ConfigError(
                "workload.mean_interarrival_slots must be > 0")
        if self.duration_slots < 0:
            raise ConfigError("workload.duration_slots must be >= 0")
        for name in ("prompt_sigma_log", "response_sigma_log"):
            if getattr(self, name) < 0:
                raise ConfigError(f"workload.{name} must be >= 0")
        if self.scale < 1:
            raise ConfigError("workload.scale must be >= 1")
        if self.kv_bytes_per_token <= 0:
            raise ConfigError("workload.kv_bytes_per_token must be > 0")


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    tokens_per_slot: int = 10
    epoch_slots: int = 1

    def __post_init__(self):
        if self.tokens_per_slot < 1:
            raise ConfigError("sim.tokens_per_slot must be >= 1")
        if self.epoch_slots < 1:
            raise ConfigError("sim.epoch_slots must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    migration: MigrationConfig = field(default_factory=MigrationConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {self.schema_version}, "
                f"expected {SCHEMA_VERSION}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_SECTION_TYPES = {
    "cluster": ClusterConfig,
    "scheduler": SchedulerConfig,
    "migration": MigrationConfig,
    "workload": WorkloadConfig,
    "sim": SimConfig,
}


def _build_section(name: str, cls, data: Dict[str, Any]):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = cls.__dataclass_fields__
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(
            f"unknown keys in section {name!r}: {sorted(unknown)}")
    for key, value in data.items():
        expected = known[key].type
        if expected == "int" and (isinstance(value, bool)
                                  or not isinstance(value, int)):
            raise ConfigError(f"{name}.{key} must be an integer")
        if expected == "float" and (isinstance(value, bool)
                                    or not isinstance(value, (int, float))):
            raise ConfigError(f"{name}.{key} must be a number")
        if expected == "bool" and not isinstance(value, bool):
            raise ConfigError(f"{name}.{key} must be a boolean")
        if expected == "str" and not isinstance(value, str):
            raise ConfigError(f"{name}.{key} must be a string")
    return cls(**data)


def config_from_dict(doc: Dict[str, Any]) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    allowed = set(_SECTION_TYPES) | {"schema_version"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if not isinstance(version, int) or isinstance(version, bool):
        raise ConfigError("schema_version must be an integer")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        sections[name] = _build_section(name, cls, doc.get(name, {}))
    return RunConfig(schema_version=version, **sections)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path!r}: {exc}") from exc
    return config_from_dict(doc)
