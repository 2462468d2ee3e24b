"""Declarative experiment description with strict JSON round-tripping.

Unknown keys anywhere in the document are rejected. The top level carries
``"schema_version": 1``.
"""

from __future__ import annotations

import json
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from ..errors import ConfigError
from ..transformer import ModelConfig

SCHEMA_VERSION = 1

OPTIMIZERS = ("sgd", "sgd_momentum", "adam", "adamw", "lars")
DECAYS = ("constant", "cosine", "step")
TASKS = ("copy", "reverse", "majority")


@dataclass
class TaskConfig:
    kind: str = "reverse"
    vocab: int = 32
    t: int = 32
    n_train: int = 4096
    n_eval: int = 512


@dataclass
class OptimizerConfig:
    kind: str = "adamw"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    momentum: float = 0.9
    eps: float = 1e-8
    grad_clip: float | None = None
    trust_coef: float = 0.001


@dataclass
class SchedulePlan:
    warmup_steps: int = 0
    decay: str = "constant"
    step_points: list = field(default_factory=list)
    step_factor: float = 0.1
    base_lr: float | None = None


@dataclass
class InterventionPlan:
    kind: str = "none"
    intervention_step: int | None = None
    intervention_epoch: int | None = None
    tau_target: float = 1.0


@dataclass
class ProbeConfig:
    enabled: bool = False
    every: int | None = None
    extra_steps: list = field(default_factory=list)
    top_k: int = 5
    lanczos_iters: int = 20
    hvp_eps: float = 1e-4
    batch_size: int = 64


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    run_id: str = "run"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: SchedulePlan = field(default_factory=SchedulePlan)
    intervention: InterventionPlan = field(default_factory=InterventionPlan)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    steps: int = 1000
    batch_size: int = 64
    steps_per_epoch: int = 200
    log_every: int = 10
    eval_every: int = 100
    full_stats_every: int = 100
    collapse_threshold: float = 0.1
    max_bad_steps: int = 3
    record_timing: bool = False
    checkpoint: bool = True

    @property
    def base_lr(self) -> float:
        return self.schedule.base_lr if self.schedule.base_lr is not None else self.optimizer.lr

    @property
    def intervention_at(self) -> int | None:
        iv = self.intervention
        if iv.kind == "none":
            return None
        if iv.intervention_step is not None:
            return iv.intervention_step
        return iv.intervention_epoch * self.steps_per_epoch

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        self.model.validate()
        if self.task.kind not in TASKS:
            raise ConfigError(f"unknown task kind {self.task.kind!r}")
        if self.task.vocab < 2 or self.task.t < 2:
            raise ConfigError("task needs vocab >= 2 and t >= 2")
        if self.task.vocab > self.model.vocab_size:
            raise ConfigError("task vocabulary exceeds model vocab_size")
        if self.task.t > self.model.max_seq_len:
            raise ConfigError("task length exceeds model max_seq_len")
        if self.optimizer.kind not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer.kind!r}")
        if not 0 <= self.optimizer.beta1 < 1 or not 0 <= self.optimizer.beta2 < 1:
            raise ConfigError("betas must lie in [0, 1)")
        if self.base_lr < 0:
            raise ConfigError("learning rate must be non-negative")
        if self.schedule.decay not in DECAYS:
            raise ConfigError(f"unknown schedule decay {self.schedule.decay!r}")
        if self.schedule.warmup_steps < 0:
            raise ConfigError("warmup_steps must be non-negative")
        iv = self.intervention
        if iv.kind not in ("none", "temperature"):
            raise ConfigError(f"unknown intervention kind {iv.kind!r}")
        if not iv.tau_target > 0:
            raise ConfigError("tau_target must be positive")
        if iv.kind == "temperature" and iv.intervention_step is None and iv.intervention_epoch is None:
            raise ConfigError("temperature intervention needs intervention_step or intervention_epoch")
        if self.steps < 0 or self.batch_size < 1 or self.steps_per_epoch < 1 or self.log_every < 1:
            raise ConfigError("steps, batch_size, steps_per_epoch and log_every must be positive")
        if not 0 < self.collapse_threshold < 1:
            raise ConfigError("collapse_threshold must lie in (0, 1)")


def _from_dict(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {', '.join(unknown)}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name, value in data.items():
        tp = hints[name]
        if is_dataclass(tp):
            value = _from_dict(tp, value, f"{path}.{name}")
        elif tp is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    if "schema_version" not in data:
        raise ConfigError("config is missing schema_version")
    cfg = _from_dict(ExperimentConfig, data, "config")
    cfg.validate()
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig, path=None) -> str:
    text = json.dumps(config_to_dict(cfg), indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def with_overrides(cfg: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Copy of ``cfg`` with dotted-path fields replaced (``{"optimizer.lr": 2e-3}``)."""
    data = config_to_dict(cfg)
    for key, value in overrides.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"unknown config path {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config path {key!r}")
        node[parts[-1]] = value
    return config_from_dict(data)
