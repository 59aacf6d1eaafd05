"""Semantic-consistency-preserving control branch.

A trainable copy of the base encoder whose residual blocks normalize with
SPADE (at the configured stages), fed by a multi-scale semantic-map pyramid.
The encoder input is ``concat(z_t, level-0 segmap features)``. Stage outputs
reach the base decoder's skip pathway through zero-initialized 1x1 bridges.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import ConfigError, TimeEmbedding, conv3x3, zero_module
from .config import MIDDLE, ModelConfig
from .text import TextEmbedding
from .unet import BaseUNet, EncoderStage, MiddleBlock, _as_t, _check_input


@dataclass
class SegmapPyramid:
    levels: list[torch.Tensor]  # one per encoder stage, then the middle level

    def stage(self, i: int) -> torch.Tensor:
        return self.levels[i]

    @property
    def middle(self) -> torch.Tensor:
        return self.levels[-1]


class ConditionFeatureExtractor(nn.Module):
    """3x3 conv stack; each level after the first halves the resolution."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c, pm = cfg.cond_channels, cfg.padding_mode
        self.resolution = cfg.resolution
        self.dedicated_middle = cfg.middle_level == "dedicated"
        self.stem = nn.Sequential(conv3x3(cfg.in_channels, c, pm), nn.SiLU(), conv3x3(c, c, pm))
        self.levels = nn.ModuleList(
            nn.Sequential(conv3x3(c, c, pm, stride=2), nn.SiLU(), conv3x3(c, c, pm))
            for _ in range(cfg.n_stages - 1)
        )
        self.middle = conv3x3(c, c, pm) if self.dedicated_middle else None

    def forward(self, segmap: torch.Tensor) -> SegmapPyramid:
        if segmap.shape[-1] != self.resolution or segmap.shape[-2] != self.resolution:
            raise ValueError(f"segmap must be {self.resolution}x{self.resolution}, got {tuple(segmap.shape[-2:])}")
        h = self.stem(segmap)
        levels = [h]
        for block in self.levels:
            h = block(F.silu(h))
            levels.append(h)
        levels.append(self.middle(F.silu(h)) if self.middle is not None else h)
        return SegmapPyramid(levels)


def condition_feature_extractor(segmap: torch.Tensor, weights) -> SegmapPyramid:
    control = weights.control if hasattr(weights, "control") else weights
    return control.cond(segmap)


class SCPControlNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        k = cfg.n_stages
        self.cond = ConditionFeatureExtractor(cfg)
        self.time_embed = TimeEmbedding(cfg.time_dim, cfg.time_dim)
        self.text_pool = nn.Linear(cfg.text_dim, cfg.time_dim)
        self.conv_in = conv3x3(cfg.in_channels + cfg.cond_channels, ch[0], cfg.padding_mode)
        self.down = nn.ModuleList(
            EncoderStage(
                ch[max(i - 1, 0)], ch[i], cfg, i in cfg.attention_stages, i < k - 1,
                spade=f"down{i + 1}" in cfg.spade_stages,
            )
            for i in range(k)
        )
        self.mid = MiddleBlock(ch[-1], cfg, spade=MIDDLE in cfg.spade_stages)
        self.bridges = nn.ModuleList(zero_module(nn.Conv2d(c, c, 1)) for c in ch)
        self.mid_bridge = zero_module(nn.Conv2d(ch[-1], ch[-1], 1))

    @classmethod
    def from_base(cls, base: BaseUNet, cfg: ModelConfig | None = None) -> "SCPControlNet":
        """Trainable copy: every tensor shared in name and shape is copied from the base.

        ``cfg`` may differ from the base config only in control-branch fields
        (spade_stages, middle_level, cond_channels, spade_hidden).
        """
        cfg = cfg or base.cfg
        control_only = dict(
            spade_stages=base.cfg.spade_stages, middle_level=base.cfg.middle_level,
            cond_channels=base.cfg.cond_channels, spade_hidden=base.cfg.spade_hidden,
        )
        if replace(cfg, **control_only) != base.cfg:
            raise ConfigError("control config differs from the base beyond control-branch fields")
        control = cls(cfg)
        base_state = base.state_dict()
        own = control.state_dict()
        for name, value in own.items():
            if name in base_state and base_state[name].shape == value.shape:
                own[name] = base_state[name].clone()
        # conv_in sees extra segmap-feature channels; the z_t part copies the base
        w = torch.zeros_like(own["conv_in.weight"])
        w[:, : base.cfg.in_channels] = base_state["conv_in.weight"]
        own["conv_in.weight"] = w
        own["conv_in.bias"] = base_state["conv_in.bias"].clone()
        control.load_state_dict(own)
        return control

    def forward(self, z: torch.Tensor, t: torch.Tensor, text: TextEmbedding, segmap: torch.Tensor):
        pyramid = self.cond(segmap)
        temb = self.time_embed(t) + self.text_pool(text.pooled())
        h = self.conv_in(torch.cat([z, pyramid.stage(0)], dim=1))
        residuals = []
        for i, (stage, bridge) in enumerate(zip(self.down, self.bridges)):
            h, skip = stage(h, temb, text, pyramid.stage(i))
            residuals.append(bridge(skip))
        h = self.mid(h, temb, text, pyramid.middle)
        return residuals, self.mid_bridge(h)


def scp_predict(z_t: torch.Tensor, t, text: TextEmbedding, segmap: torch.Tensor, weights) -> torch.Tensor:
    """Noise estimate from the base model steered by the control branch."""
    _check_input(z_t, weights.base.cfg)
    t = _as_t(t, z_t)
    residuals, mid = weights.control(z_t, t, text, segmap)
    return weights.base(z_t, t, text, residuals, mid)
