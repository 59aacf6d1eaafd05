from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .blocks import ConfigError

MIDDLE = "middle"


def stage_name(i: int) -> str:
    return f"down{i + 1}"


def parse_spade_stages(text: str) -> frozenset[str]:
    """``"down3,down4,middle"`` -> frozenset; empty string or ``none`` -> no SPADE."""
    text = text.strip().lower()
    if text in ("", "none"):
        return frozenset()
    return frozenset(s.strip().replace(".", "") for s in text.split(",") if s.strip())


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    base_channels: int = 16
    channel_mults: tuple[int, ...] = (1, 2, 2, 4)
    attention_stages: tuple[int, ...] = (1, 2)
    spade_stages: frozenset[str] = field(default_factory=lambda: frozenset({"down1", "down2", "down3", "down4", MIDDLE}))
    resolution: int = 32
    time_dim: int = 64
    text_dim: int = 32
    vocab_size: int = 4096
    max_tokens: int = 77
    cond_channels: int = 16
    spade_hidden: int = 32
    padding_mode: str = "zeros"
    middle_level: str = "dedicated"

    def __post_init__(self):
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))
        object.__setattr__(self, "attention_stages", tuple(sorted(self.attention_stages)))
        object.__setattr__(self, "spade_stages", frozenset(self.spade_stages))
        self.validate()

    @property
    def n_stages(self) -> int:
        return len(self.channel_mults)

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_mults]

    @property
    def stage_names(self) -> list[str]:
        return [stage_name(i) for i in range(self.n_stages)]

    def validate(self) -> None:
        if self.n_stages < 1:
            raise ConfigError("need at least one encoder stage")
        if self.resolution % (2 ** (self.n_stages - 1)):
            raise ConfigError(f"resolution {self.resolution} not divisible by 2^{self.n_stages - 1}")
        bad = [i for i in self.attention_stages if not 0 <= i < self.n_stages]
        if bad:
            raise ConfigError(f"attention stages {bad} out of range")
        if self.n_stages - 1 in self.attention_stages:
            raise ConfigError("the final encoder stage cannot carry a cross-attention block")
        unknown = self.spade_stages - set(self.stage_names) - {MIDDLE}
        if unknown:
            raise ConfigError(f"spade_stages reference nonexistent stages: {sorted(unknown)}")
        if self.padding_mode not in ("zeros", "circular"):
            raise ConfigError(f"unknown padding mode {self.padding_mode!r}")
        if self.middle_level not in ("dedicated", "reuse_deepest"):
            raise ConfigError(f"unknown middle_level {self.middle_level!r}")

    def to_json(self) -> str:
        d = asdict(self)
        d["spade_stages"] = sorted(self.spade_stages)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["channel_mults"] = tuple(d["channel_mults"])
        d["attention_stages"] = tuple(d["attention_stages"])
        d["spade_stages"] = frozenset(d["spade_stages"])
        return cls(**d)
