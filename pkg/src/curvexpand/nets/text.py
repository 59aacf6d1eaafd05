"""Hashed-vocabulary text encoder standing in for a pretrained one."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import torch
from torch import nn

from ..captions import MAX_TOKENS, tokenize


@dataclass
class TextEmbedding:
    tokens: torch.Tensor  # (B, L, D)
    mask: torch.Tensor  # (B, L) bool, True = valid token

    def __len__(self) -> int:
        return self.tokens.shape[1]

    def index(self, idx) -> "TextEmbedding":
        return TextEmbedding(self.tokens[idx], self.mask[idx])

    def pooled(self) -> torch.Tensor:
        """Mean over valid tokens, (B, D)."""
        m = self.mask.to(self.tokens.dtype)[..., None]
        return (self.tokens * m).sum(1) / m.sum(1).clamp_min(1.0)


def token_ids(caption: str, vocab_size: int, max_tokens: int = MAX_TOKENS) -> list[int]:
    """Stable hashed ids in [1, vocab_size); 0 is padding."""
    if not caption or not caption.strip():
        raise ValueError("empty caption")
    toks = tokenize(caption)[:max_tokens]
    return [zlib.crc32(t.encode("utf-8")) % (vocab_size - 1) + 1 for t in toks]


def batch_token_ids(captions: list[str], vocab_size: int, max_tokens: int = MAX_TOKENS):
    ids = [token_ids(c, vocab_size, max_tokens) for c in captions]
    length = max(len(i) for i in ids)
    out = torch.zeros(len(ids), length, dtype=torch.long)
    for row, seq in enumerate(ids):
        out[row, : len(seq)] = torch.tensor(seq)
    return out, out != 0


class TextEncoder(nn.Module):
    def __init__(self, vocab_size: int = 4096, dim: int = 32, max_tokens: int = MAX_TOKENS):
        super().__init__()
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens
        self.embed = nn.Embedding(vocab_size, dim, padding_idx=0)
        self.pos = nn.Parameter(torch.randn(max_tokens, dim) * 0.02)
        self.norm = nn.LayerNorm(dim)

    def encode_ids(self, ids: torch.Tensor, mask: torch.Tensor) -> TextEmbedding:
        x = self.embed(ids) + self.pos[: ids.shape[1]]
        return TextEmbedding(self.norm(x), mask)

    def forward(self, captions: list[str]) -> TextEmbedding:
        ids, mask = batch_token_ids(captions, self.vocab_size, self.max_tokens)
        return self.encode_ids(ids, mask)


def text_encode(caption: str, vocab: TextEncoder) -> TextEmbedding:
    """Embedding of one caption (batch dimension 1), truncated at ``vocab.max_tokens``."""
    return vocab([caption])
