"""Text-conditioned UNet noise predictor."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import CrossAttention, Downsample, GroupNorm, ResBlock, TimeEmbedding, Upsample, conv3x3
from .config import ModelConfig
from .text import TextEmbedding, TextEncoder


class EncoderStage(nn.Module):
    """ResBlock, optional cross-attention, optional stride-2 downsample."""

    def __init__(self, cin, cout, cfg: ModelConfig, attention: bool, downsample: bool, spade: bool):
        super().__init__()
        self.res = ResBlock(
            cin, cout, cfg.time_dim, cfg.padding_mode,
            spade_channels=cfg.cond_channels if spade else None, spade_hidden=cfg.spade_hidden,
        )
        self.attn = CrossAttention(cout, cfg.text_dim) if attention else None
        self.down = Downsample(cout, cfg.padding_mode) if downsample else None

    def forward(self, h, temb, text: TextEmbedding, segmap_feat=None):
        h = self.res(h, temb, segmap_feat)
        if self.attn is not None:
            h = self.attn(h, text.tokens, text.mask)
        skip = h
        if self.down is not None:
            h = self.down(h)
        return h, skip


class MiddleBlock(nn.Module):
    def __init__(self, channels, cfg: ModelConfig, spade: bool = False):
        super().__init__()
        kw = dict(spade_channels=cfg.cond_channels if spade else None, spade_hidden=cfg.spade_hidden)
        self.res1 = ResBlock(channels, channels, cfg.time_dim, cfg.padding_mode, **kw)
        self.attn = CrossAttention(channels, cfg.text_dim)
        self.res2 = ResBlock(channels, channels, cfg.time_dim, cfg.padding_mode, **kw)

    def forward(self, h, temb, text: TextEmbedding, segmap_feat=None):
        h = self.res1(h, temb, segmap_feat)
        h = self.attn(h, text.tokens, text.mask)
        return self.res2(h, temb, segmap_feat)


class DecoderStage(nn.Module):
    def __init__(self, cin, skip_ch, cout, cfg: ModelConfig, attention: bool, upsample: bool):
        super().__init__()
        self.up = Upsample(cin, cfg.padding_mode) if upsample else None
        self.res = ResBlock(cin + skip_ch, cout, cfg.time_dim, cfg.padding_mode)
        self.attn = CrossAttention(cout, cfg.text_dim) if attention else None

    def forward(self, h, skip, temb, text: TextEmbedding):
        if self.up is not None:
            h = self.up(h)
        h = self.res(torch.cat([h, skip], dim=1), temb)
        if self.attn is not None:
            h = self.attn(h, text.tokens, text.mask)
        return h


class BaseUNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        k = cfg.n_stages
        self.text_encoder = TextEncoder(cfg.vocab_size, cfg.text_dim, cfg.max_tokens)
        self.time_embed = TimeEmbedding(cfg.time_dim, cfg.time_dim)
        # global caption signal alongside the per-location cross-attention
        self.text_pool = nn.Linear(cfg.text_dim, cfg.time_dim)
        self.conv_in = conv3x3(cfg.in_channels, ch[0], cfg.padding_mode)
        self.down = nn.ModuleList(
            EncoderStage(ch[max(i - 1, 0)], ch[i], cfg, i in cfg.attention_stages, i < k - 1, spade=False)
            for i in range(k)
        )
        self.mid = MiddleBlock(ch[-1], cfg)
        self.up = nn.ModuleList(
            DecoderStage(ch[min(i + 1, k - 1)], ch[i], ch[i], cfg, i in cfg.attention_stages, i < k - 1)
            for i in reversed(range(k))
        )
        self.norm_out = GroupNorm(ch[0])
        self.conv_out = conv3x3(ch[0], cfg.in_channels, cfg.padding_mode)

    def forward(
        self,
        z: torch.Tensor,
        t: torch.Tensor,
        text: TextEmbedding,
        down_residuals: list[torch.Tensor] | None = None,
        mid_residual: torch.Tensor | None = None,
    ) -> torch.Tensor:
        temb = self.time_embed(t) + self.text_pool(text.pooled())
        h = self.conv_in(z)
        skips = []
        for stage in self.down:
            h, skip = stage(h, temb, text)
            skips.append(skip)
        h = self.mid(h, temb, text)
        if down_residuals is not None:
            skips = [s + r for s, r in zip(skips, down_residuals)]
        if mid_residual is not None:
            h = h + mid_residual
        for stage, skip in zip(self.up, reversed(skips)):
            h = stage(h, skip, temb, text)
        return self.conv_out(F.silu(self.norm_out(h)))


def base_predict(z_t: torch.Tensor, t: torch.Tensor, text: TextEmbedding, weights) -> torch.Tensor:
    """Noise estimate from the text-conditioned base model alone."""
    base = weights.base if hasattr(weights, "base") else weights
    _check_input(z_t, base.cfg)
    return base(z_t, _as_t(t, z_t), text)


def _as_t(t, z: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long)
    if t.dim() == 0:
        t = t.expand(z.shape[0])
    return t


def _check_input(z: torch.Tensor, cfg: ModelConfig) -> None:
    if z.dim() != 4 or z.shape[1] != cfg.in_channels:
        raise ValueError(f"expected (B, {cfg.in_channels}, H, W), got {tuple(z.shape)}")
    divisor = 2 ** (cfg.n_stages - 1)
    if z.shape[-1] % divisor or z.shape[-2] % divisor:
        raise ValueError(f"spatial size {tuple(z.shape[-2:])} not divisible by {divisor}")
