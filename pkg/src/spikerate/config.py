"""Training configuration: nested dataclasses read from and written to YAML."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .events import DEFAULT_TAU_US
from .learn import LearnConfig


@dataclass
class ArchConfig:
    hidden: list[int] = field(default_factory=lambda: [1000, 1000, 1000])
    K: int = 5
    tau_us: int = DEFAULT_TAU_US
    n_classes: int = 10
    init_high: float = 1e-5

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.tau_us < 1:
            raise ConfigError(f"tau_us must be >= 1, got {self.tau_us}")
        if not self.hidden or any(n < 1 for n in self.hidden):
            raise ConfigError(f"hidden sizes must be a non-empty list of positive ints, got {self.hidden}")
        if self.n_classes < 1:
            raise ConfigError("n_classes must be >= 1")
        if self.init_high < 0:
            raise ConfigError("init_high must be >= 0")


@dataclass
class DataConfig:
    kind: str = "synthetic"  # "synthetic" or "directory"
    path: str = ""
    classes: list[str] = field(default_factory=lambda: ["bar_right", "bar_down"])
    train_per_class: int = 900
    test_per_class: int = 100
    length: int = 30
    noise_rate: float = 0.01
    gap: int = 15
    crop_origin: list[int] = field(default_factory=lambda: [52, 52])
    data_seed: int = 1
    bar_length: int = 0  # 0: random length per recording

    def __post_init__(self):
        if self.kind not in ("synthetic", "directory"):
            raise ConfigError(f"data.kind must be 'synthetic' or 'directory', got {self.kind!r}")
        if self.kind == "directory" and not self.path:
            raise ConfigError("data.path is required for directory datasets")
        if self.gap < 0 or self.length < 1 or self.noise_rate < 0:
            raise ConfigError("data.gap >= 0, data.length >= 1 and data.noise_rate >= 0 required")
        if self.train_per_class < 1 or self.test_per_class < 0:
            raise ConfigError("data.train_per_class >= 1 and data.test_per_class >= 0 required")
        if len(self.crop_origin) != 2:
            raise ConfigError("data.crop_origin must be [x0, y0]")
        if self.bar_length < 0:
            raise ConfigError(f"data.bar_length must be >= 0, got {self.bar_length}")


@dataclass
class TrainConfig:
    arch: ArchConfig = field(default_factory=ArchConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)
    data: DataConfig = field(default_factory=DataConfig)
    dropout: float = 0.5
    passes: int = 3
    seed: int = 0
    checkpoint_every: int = 1  # layer passes between checkpoints; 0 = final only
    probe: bool = True  # evaluate the test split after every layer pass
    label_strength: float = 1.0

    def __post_init__(self):
        if self.passes < 1:
            raise ConfigError(f"passes must be >= 1, got {self.passes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.label_strength <= 0:
            raise ConfigError("label_strength must be > 0")


def desk_config(**overrides) -> TrainConfig:
    """Laptop-scale recipe: 2-class full-width moving bars, one hidden layer of 100."""
    cfg = TrainConfig(
        arch=ArchConfig(hidden=[100], K=5, n_classes=2, init_high=1e-3),
        learn=LearnConfig(eps_layers=1e-3, eps_heads=1e-4, horizon=5),
        data=DataConfig(
            kind="synthetic",
            classes=["bar_right", "bar_down"],
            train_per_class=40,
            test_per_class=10,
            length=30,
            noise_rate=0.01,
            gap=15,
            bar_length=23,
        ),
        dropout=0.5,
        passes=3,
        seed=0,
    )
    for key, value in overrides.items():
        apply_override(cfg, key, value)
    return revalidate(cfg)


# --- (de)serialization -------------------------------------------------------


def to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _coerce(tp, value, key: str):
    origin = typing.get_origin(tp)
    try:
        if dataclasses.is_dataclass(tp):
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected a mapping")
            return from_dict(tp, value, prefix=f"{key}.")
        if origin is list:
            (item_tp,) = typing.get_args(tp)
            if isinstance(value, str):
                value = yaml.safe_load(value)
            if not isinstance(value, (list, tuple)):
                value = [value]
            return [_coerce(item_tp, v, key) for v in value]
        if tp is bool:
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("true", "yes", "1", "on"):
                    return True
                if low in ("false", "no", "0", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if tp is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(float(value)) if isinstance(value, str) and "e" in value.lower() else int(value)
        if tp is float:
            return float(value)
        if tp is str:
            return str(value)
    except ConfigError:
        raise
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {getattr(tp, '__name__', tp)}") from None
    return value


def from_dict(cls, data: dict, prefix: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in sorted(unknown))}")
    kwargs = {k: _coerce(hints[k], v, prefix + k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def apply_override(cfg, key: str, value) -> None:
    """Set ``a.b.c=value`` on a nested config, rejecting unknown keys."""
    parts = key.split(".")
    obj = cfg
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(obj) or part not in {f.name for f in dataclasses.fields(obj)}:
            raise ConfigError(f"unknown config key: {key}")
        obj = getattr(obj, part)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(obj) or leaf not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key: {key}")
    hints = typing.get_type_hints(type(obj))
    setattr(obj, leaf, _coerce(hints[leaf], value, key))


def revalidate(cfg: TrainConfig) -> TrainConfig:
    """Re-run every ``__post_init__`` check after in-place overrides."""
    return from_dict(TrainConfig, to_dict(cfg))


def parse_overrides(items) -> list[tuple[str, str]]:
    out = []
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        out.append((key.strip(), value.strip()))
    return out


def load_config(path=None, overrides=(), seed: int | None = None) -> TrainConfig:
    """Read a config file (or a run manifest holding a ``config`` section)."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        if "config" in data and "command" in data:
            data = data["config"]
    cfg = from_dict(TrainConfig, data)
    for key, value in overrides:
        apply_override(cfg, key, value)
    if seed is not None:
        cfg.seed = seed
    return revalidate(cfg)


def dump_yaml(data) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)
