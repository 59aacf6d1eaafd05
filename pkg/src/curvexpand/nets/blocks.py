"""Layers shared by the base predictor and the control branch."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


class ConfigError(ValueError):
    """Inconsistent architecture configuration."""


def norm_groups(channels: int, max_groups: int = 8) -> int:
    groups = min(max_groups, channels)
    if channels % groups:
        raise ConfigError(f"{channels} channels not divisible into {groups} groups")
    return groups


def conv3x3(cin: int, cout: int, padding_mode: str = "zeros", stride: int = 1, bias: bool = True) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, padding_mode=padding_mode, bias=bias)


def zero_module(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class TimeEmbedding(nn.Module):
    def __init__(self, freq_dim: int, dim: int):
        super().__init__()
        self.freq_dim = freq_dim
        self.mlp = nn.Sequential(nn.Linear(freq_dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.mlp(timestep_embedding(t, self.freq_dim))


# -- SPADE -------------------------------------------------------------------


@dataclass
class SpadeParams:
    """Weights of the three SPADE convolutions.

    shared: segmap features -> hidden (ReLU); gamma/beta: hidden -> channels.
    The modulation is ``(1 + gamma_conv(hidden)) * norm(h) + beta_conv(hidden)``.
    """

    shared_weight: torch.Tensor
    shared_bias: torch.Tensor
    gamma_weight: torch.Tensor
    gamma_bias: torch.Tensor
    beta_weight: torch.Tensor
    beta_bias: torch.Tensor


def _conv(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor, padding_mode: str) -> torch.Tensor:
    pad = weight.shape[-1] // 2
    if padding_mode == "circular":
        x = F.pad(x, (pad, pad, pad, pad), mode="circular")
        return F.conv2d(x, weight, bias)
    return F.conv2d(x, weight, bias, padding=pad)


def spade_modulation(
    segmap_feat: torch.Tensor, size: tuple[int, int], params: SpadeParams, padding_mode: str = "zeros"
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-location scale and shift predicted from segmap features."""
    if segmap_feat.shape[-2:] != size:
        segmap_feat = F.interpolate(segmap_feat, size=size, mode="nearest")
    actv = F.relu(_conv(segmap_feat, params.shared_weight, params.shared_bias, padding_mode))
    gamma = 1.0 + _conv(actv, params.gamma_weight, params.gamma_bias, padding_mode)
    beta = _conv(actv, params.beta_weight, params.beta_bias, padding_mode)
    return gamma, beta


def spade_normalize(
    h_in: torch.Tensor,
    segmap_feat: torch.Tensor,
    params: SpadeParams,
    groups: int | None = None,
    eps: float = 1e-5,
    padding_mode: str = "zeros",
) -> torch.Tensor:
    """Parameter-free group norm of ``h_in`` modulated by segmap-predicted gamma/beta."""
    channels = h_in.shape[1]
    groups = norm_groups(channels) if groups is None else groups
    if channels % groups:
        raise ConfigError(f"{channels} channels not divisible into {groups} groups")
    normalized = F.group_norm(h_in, groups, eps=eps)
    gamma, beta = spade_modulation(segmap_feat, tuple(h_in.shape[-2:]), params, padding_mode)
    return gamma * normalized + beta


class SPADE(nn.Module):
    def __init__(self, channels: int, cond_channels: int, hidden: int = 32, padding_mode: str = "zeros"):
        super().__init__()
        self.groups = norm_groups(channels)
        self.padding_mode = padding_mode
        self.shared = nn.Conv2d(cond_channels, hidden, 3, padding=1)
        # gamma starts at exactly 1, beta at exactly 0
        self.gamma = zero_module(nn.Conv2d(hidden, channels, 3, padding=1))
        self.beta = zero_module(nn.Conv2d(hidden, channels, 3, padding=1))

    def params(self) -> SpadeParams:
        return SpadeParams(
            self.shared.weight, self.shared.bias,
            self.gamma.weight, self.gamma.bias,
            self.beta.weight, self.beta.bias,
        )

    def forward(self, h: torch.Tensor, segmap_feat: torch.Tensor) -> torch.Tensor:
        return spade_normalize(h, segmap_feat, self.params(), self.groups, padding_mode=self.padding_mode)


class GroupNorm(nn.GroupNorm):
    """GroupNorm that ignores the segmap argument, so blocks can swap it for SPADE."""

    def __init__(self, channels: int):
        super().__init__(norm_groups(channels), channels)

    def forward(self, h: torch.Tensor, segmap_feat: torch.Tensor | None = None) -> torch.Tensor:
        return super().forward(h)


# -- residual / attention blocks -------------------------------------------------


class ResBlock(nn.Module):
    def __init__(
        self,
        cin: int,
        cout: int,
        time_dim: int,
        padding_mode: str = "zeros",
        spade_channels: int | None = None,
        spade_hidden: int = 32,
    ):
        super().__init__()
        self.uses_spade = spade_channels is not None
        if self.uses_spade:
            self.norm1 = SPADE(cin, spade_channels, spade_hidden, padding_mode)
            self.norm2 = SPADE(cout, spade_channels, spade_hidden, padding_mode)
        else:
            self.norm1 = GroupNorm(cin)
            self.norm2 = GroupNorm(cout)
        self.conv1 = conv3x3(cin, cout, padding_mode)
        self.time_proj = nn.Linear(time_dim, cout)
        self.conv2 = conv3x3(cout, cout, padding_mode)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor, segmap_feat: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x, segmap_feat)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h, segmap_feat)))
        return self.skip(x) + h


class CrossAttention(nn.Module):
    """Queries from image features; keys and values from text tokens."""

    def __init__(self, channels: int, text_dim: int, heads: int = 1):
        super().__init__()
        if channels % heads:
            raise ConfigError("channels must divide evenly across heads")
        self.heads = heads
        self.norm = GroupNorm(channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(text_dim, channels, bias=False)
        self.to_v = nn.Linear(text_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def attend(self, x: torch.Tensor, tokens: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        """Attention output for normalized features ``x`` of shape (B, N, C)."""
        b, n, c = x.shape
        d = c // self.heads
        q = self.to_q(x).view(b, n, self.heads, d).transpose(1, 2)
        k = self.to_k(tokens).view(b, -1, self.heads, d).transpose(1, 2)
        v = self.to_v(tokens).view(b, -1, self.heads, d).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d)
        if mask is not None:
            scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        out = torch.softmax(scores, dim=-1) @ v
        return self.to_out(out.transpose(1, 2).reshape(b, n, c))

    def forward(self, h: torch.Tensor, tokens: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        b, c, hh, ww = h.shape
        x = self.norm(h).flatten(2).transpose(1, 2)
        out = self.attend(x, tokens, mask)
        return h + out.transpose(1, 2).view(b, c, hh, ww)


class Downsample(nn.Module):
    def __init__(self, channels: int, padding_mode: str = "zeros"):
        super().__init__()
        self.conv = conv3x3(channels, channels, padding_mode, stride=2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int, padding_mode: str = "zeros"):
        super().__init__()
        self.conv = conv3x3(channels, channels, padding_mode)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(F.interpolate(x, scale_factor=2.0, mode="nearest"))
