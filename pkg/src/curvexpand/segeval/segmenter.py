"""Small encoder-decoder segmenter trained from scratch with per-epoch validation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .metrics import f1, miou

log = logging.getLogger(__name__)


class SegmenterDiverged(RuntimeError):
    pass


def _block(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1), nn.GroupNorm(min(8, cout), cout), nn.ReLU(),
        nn.Conv2d(cout, cout, 3, padding=1), nn.GroupNorm(min(8, cout), cout), nn.ReLU(),
    )


class SmallUNet(nn.Module):
    """Three-stage encoder-decoder with skip connections."""

    def __init__(self, channels: tuple[int, int, int] = (8, 16, 32), in_channels: int = 1):
        super().__init__()
        c1, c2, c3 = channels
        self.enc1 = _block(in_channels, c1)
        self.enc2 = _block(c1, c2)
        self.enc3 = _block(c2, c3)
        self.up2 = nn.ConvTranspose2d(c3, c2, 2, stride=2)
        self.dec2 = _block(2 * c2, c2)
        self.up1 = nn.ConvTranspose2d(c2, c1, 2, stride=2)
        self.dec1 = _block(2 * c1, c1)
        self.head = nn.Conv2d(c1, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        e1 = self.enc1(x)
        e2 = self.enc2(F.max_pool2d(e1, 2))
        e3 = self.enc3(F.max_pool2d(e2, 2))
        d2 = self.dec2(torch.cat([self.up2(e3), e2], 1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], 1))
        return self.head(d1)

    @torch.no_grad()
    def predict(self, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """Bool masks for float images (N, H, W) in [0, 1]."""
        self.eval()
        x = torch.as_tensor(images, dtype=torch.float32)[:, None]
        out = [self(x[i : i + batch_size])[:, 0] > 0 for i in range(0, len(x), batch_size)]
        return torch.cat(out).numpy()


@dataclass
class SegHyperparams:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 2e-3
    channels: tuple[int, int, int] = (8, 16, 32)


@dataclass
class EvalReport:
    method: str
    ratio: int | None
    seed: int
    miou: list[float] = field(default_factory=list)
    f1: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_miou: float = float("nan")
    best_f1: float = float("nan")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def select_best(mious: list[float], f1s: list[float]) -> tuple[int, float, float]:
    """Best epoch by mIoU alone (earliest on ties); F1 is read at that epoch."""
    best = int(np.argmax(mious))
    return best, mious[best], f1s[best]


def train_segmenter(
    train: tuple[np.ndarray, np.ndarray],
    val: tuple[np.ndarray, np.ndarray],
    hyperparams: SegHyperparams | None = None,
    seed: int = 0,
    *,
    method: str = "original",
    ratio: int | None = None,
) -> tuple[EvalReport, dict]:
    """Train from random init, validate after every epoch, keep the best-mIoU state.

    ``train``/``val`` are (images, masks): float (N, H, W) in [0, 1] and bool (N, H, W).
    Validation mIoU/F1 pool all validation pixels.
    """
    hp = hyperparams or SegHyperparams()
    x_tr, y_tr = train
    x_val, y_val = val
    if len(x_tr) == 0 or len(x_val) == 0:
        raise ValueError("train and val sets must be non-empty")
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    model = SmallUNet(hp.channels)
    opt = torch.optim.Adam(model.parameters(), lr=hp.lr)
    xt = torch.as_tensor(x_tr, dtype=torch.float32)[:, None]
    yt = torch.as_tensor(y_tr, dtype=torch.float32)[:, None]
    report = EvalReport(method, ratio, seed)
    best_state, best = None, -1.0
    bs = min(hp.batch_size, len(xt))
    for epoch in range(hp.epochs):
        model.train()
        order = torch.randperm(len(xt), generator=gen)
        for i in range(0, len(xt), bs):
            idx = order[i : i + bs]
            logits = model(xt[idx])
            loss = F.binary_cross_entropy_with_logits(logits, yt[idx]) + _dice_loss(logits, yt[idx])
            if not torch.isfinite(loss):
                raise SegmenterDiverged(f"segmenter loss {float(loss)} at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
        pred = model.predict(x_val)
        report.miou.append(miou(pred, y_val))
        report.f1.append(f1(pred, y_val))
        if report.miou[-1] > best:
            best = report.miou[-1]
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
    report.best_epoch, report.best_miou, report.best_f1 = select_best(report.miou, report.f1)
    log.info("%s ratio=%s seed=%d best mIoU %.2f @ %d", method, ratio, seed, report.best_miou, report.best_epoch)
    return report, best_state


def _dice_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = torch.sigmoid(logits)
    inter = (p * target).sum()
    return 1.0 - (2 * inter + 1.0) / (p.sum() + target.sum() + 1.0)


def load_segmenter(state: dict, channels=(8, 16, 32)) -> SmallUNet:
    model = SmallUNet(channels)
    model.load_state_dict(state)
    model.eval()
    return model
