"""Run configuration: one INI file with sections, overridable from the command line."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import ToyGenParams
from .nets import ModelConfig, TrainHyperparams, parse_spade_stages
from .nets.blocks import ConfigError
from .segeval import SegHyperparams

OUTPUT_ROOT_ENV = "CURVEXPAND_OUTPUT_ROOT"


@dataclass(frozen=True)
class ScheduleParams:
    kind: str = "linear"
    T: int = 100
    beta_min: float = 1e-3
    beta_max: float = 0.2


@dataclass(frozen=True)
class ExpandParams:
    ratio: int = 5
    master_seed: int = 0
    steps: int = 0  # 0 -> schedule.T
    max_attempts: int = 8
    min_fg_fraction: float = 0.01
    max_fg_fraction: float = 0.5
    batch_size: int = 64
    text_only: bool = True


@dataclass(frozen=True)
class EvalParams:
    methods: tuple[str, ...] = ("original", "scp")
    ratios: tuple[int, ...] = (5,)
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class RunConfig:
    data_dir: Path = Path("runs/toy/data")
    out_dir: Path = Path("runs/toy")
    toy: ToyGenParams = ToyGenParams()
    n_samples: int = 96
    train_fraction: float = 2 / 3
    split_seed: int = 0
    model: ModelConfig = field(default_factory=lambda: ModelConfig(
        base_channels=8, attention_stages=(2,), cond_channels=8, spade_hidden=16, time_dim=32
    ))
    schedule: ScheduleParams = ScheduleParams()
    base_train: TrainHyperparams = field(default_factory=lambda: TrainHyperparams(steps=2000, lr=2e-3))
    control_train: TrainHyperparams = field(default_factory=lambda: TrainHyperparams(steps=2000, lr=2e-3))
    train_seed: int = 0
    eval_every: int = 0
    expand: ExpandParams = ExpandParams()
    evaluation: EvalParams = EvalParams()
    segmenter: SegHyperparams = field(default_factory=SegHyperparams)
    oracle_epochs: int = 60

    def with_env(self) -> "RunConfig":
        root = os.environ.get(OUTPUT_ROOT_ENV)
        return replace(self, out_dir=Path(root)) if root else self


def _tuple(text: str, cast=str) -> tuple:
    return tuple(cast(x.strip()) for x in text.split(",") if x.strip())


def _coerce(value: str, current):
    if isinstance(current, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, Path):
        return Path(value)
    if isinstance(current, tuple):
        cast = type(current[0]) if current else str
        return _tuple(value, cast)
    if isinstance(current, frozenset):
        return parse_spade_stages(value)
    return value


def _update(obj, items: dict[str, str], section: str):
    names = {f.name for f in fields(obj)}
    changes = {}
    for key, value in items.items():
        key = key.replace("-", "_")
        if key not in names:
            raise ConfigError(f"unknown key [{section}] {key}")
        changes[key] = _coerce(value, getattr(obj, key))
    return replace(obj, **changes) if changes else obj


_SECTIONS = {
    "toy": "toy",
    "model": "model",
    "schedule": "schedule",
    "base_train": "base_train",
    "control_train": "control_train",
    "expand": "expand",
    "eval": "evaluation",
    "segmenter": "segmenter",
}


def load_config(path: str | Path | None = None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Defaults <- INI file <- overrides ({section: {key: value}}); ``[run]`` holds top-level keys."""
    cfg = RunConfig()
    sections: dict[str, dict[str, str]] = {}
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keys are dataclass field names, case-sensitive
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config file {path}")
        sections = {s: dict(parser.items(s)) for s in parser.sections()}
    for section, items in (overrides or {}).items():
        sections.setdefault(section, {}).update({k: v for k, v in items.items() if v is not None})
    for section, items in sections.items():
        if section == "run":
            cfg = _update(cfg, items, section)
        elif section in _SECTIONS:
            attr = _SECTIONS[section]
            cfg = replace(cfg, **{attr: _update(getattr(cfg, attr), items, section)})
        else:
            raise ConfigError(f"unknown config section [{section}]")
    return cfg.with_env()
