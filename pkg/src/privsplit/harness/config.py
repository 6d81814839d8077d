"""Run configuration: nested dataclasses with strict JSON (de)serialization."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..adversary import AttackSpec, TrainSchedule
from ..baselines import GridSpec, NoiseSpec
from ..compression import CompressionKnobs
from ..errors import ConfigError
from ..ir.strategy import TECHNIQUES
from ..ir.zoo import ZOO
from .data import DatasetSpec

SCHEMA_VERSION = 1
MODES = ("train-base", "search", "grid", "dp-baseline", "attack", "report")


@dataclass(frozen=True)
class BaseTraining:
    epochs: int = 5
    lr: float = 1e-3
    batch_size: int = 32

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("base training needs epochs >= 0, lr > 0, batch_size >= 1")


@dataclass(frozen=True)
class SearchSettings:
    episodes: int = 200
    rollouts: int = 1
    lr: float = 0.03
    optimizer: str = "sgd"
    hidden: int = 64

    def __post_init__(self):
        if self.episodes < 0 or self.rollouts < 1 or self.lr <= 0 or self.hidden < 1:
            raise ConfigError("search needs episodes >= 0, rollouts >= 1, lr > 0, hidden >= 1")
        if self.optimizer not in ("sgd", "sgd-momentum", "adam"):
            raise ConfigError(f"unknown controller optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class DpSettings:
    partitions: Optional[tuple] = None   # None: every interior unit boundary
    noise: NoiseSpec = field(default_factory=NoiseSpec)


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    name: str = "run"
    model: str = "tiny-lenet"
    mode: str = "search"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    adversary: str = "reactive"
    attack: AttackSpec = field(default_factory=AttackSpec)
    s_variant: str = "s1"
    menu: tuple = TECHNIQUES
    knobs: CompressionKnobs = field(default_factory=CompressionKnobs)
    base_training: BaseTraining = field(default_factory=BaseTraining)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    search: SearchSettings = field(default_factory=SearchSettings)
    grid: GridSpec = field(default_factory=GridSpec)
    dp: DpSettings = field(default_factory=DpSettings)
    strategy: Optional[str] = None       # for mode "attack"
    seeds: tuple = (0,)
    output_dir: str = "runs"

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if self.model not in ZOO:
            raise ConfigError(f"unknown model {self.model!r}; choose from {sorted(ZOO)}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.adversary not in ("reactive", "proactive"):
            raise ConfigError("adversary must be 'reactive' or 'proactive'")
        if self.s_variant not in ("s1", "s2"):
            raise ConfigError("s_variant must be 's1' or 's2'")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for t in self.menu:
            if t not in TECHNIQUES:
                raise ConfigError(f"unknown technique {t!r} in menu")
        if self.mode == "attack" and not self.strategy:
            raise ConfigError("mode 'attack' needs a 'strategy' string")
        self.dataset.validate()
        if self.attack.kind == "property-inference" and self.attack.hidden_classes != self.dataset.fine_classes:
            raise ConfigError("attack.hidden_classes must equal dataset.fine_classes")

    @property
    def p_variant(self) -> str:
        return self.attack.p_variant

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return None if value is None else _convert(args[0], value, where)
    if tp is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        return tuple(value)
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if tp in (int, float, str, bool) and not isinstance(value, tp):
        raise ConfigError(f"{where}: expected {tp.__name__}, got {type(value).__name__}")
    return value


def _build(cls, data, where: str = "config"):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(data)


__all__ = ["BaseTraining", "DpSettings", "MODES", "RunConfig", "SCHEMA_VERSION", "SearchSettings",
           "config_from_dict", "load_config"]
