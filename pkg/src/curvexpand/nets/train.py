"""Two-phase training: base predictor first, then the control branch with the base frozen."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch
from safetensors.torch import load_file, save_file
from safetensors import safe_open

from ..diffusion import NoiseSchedule, diffusion_loss, forward_diffuse
from .config import ModelConfig
from .control import SCPControlNet
from .text import batch_token_ids
from .unet import BaseUNet

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite."""


@dataclass
class Weights:
    base: BaseUNet
    control: SCPControlNet | None = None

    @property
    def config(self) -> ModelConfig:
        return self.base.cfg

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int = 0, with_control: bool = False) -> "Weights":
        torch.manual_seed(seed)
        base = BaseUNet(cfg)
        return cls(base, SCPControlNet.from_base(base) if with_control else None)

    def eval(self) -> "Weights":
        self.base.eval()
        if self.control is not None:
            self.control.eval()
        return self


@dataclass
class TrainHyperparams:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    grad_clip: float = 1.0
    log_every: int = 100


@dataclass
class TrainResult:
    weights: Weights
    losses: list[float] = field(default_factory=list)


def _generator(rng) -> torch.Generator:
    if isinstance(rng, torch.Generator):
        return rng
    return torch.Generator().manual_seed(int(rng))


def _loop(params, step_fn, n, hp: TrainHyperparams, gen, callback, phase):
    opt = torch.optim.Adam(params, lr=hp.lr)
    losses = []
    for step in range(hp.steps):
        idx = torch.randint(0, n, (hp.batch_size,), generator=gen)
        loss = step_fn(idx)
        if not torch.isfinite(loss):
            raise TrainingDiverged(
                f"{phase} loss is {loss.item()} at step {step}; last finite losses: {losses[-5:]}"
            )
        opt.zero_grad(set_to_none=True)
        loss.backward()
        if hp.grad_clip:
            torch.nn.utils.clip_grad_norm_(params, hp.grad_clip)
        opt.step()
        losses.append(loss.item())
        if hp.log_every and (step + 1) % hp.log_every == 0:
            recent = losses[-hp.log_every:]
            log.info("%s step %d loss %.4f", phase, step + 1, sum(recent) / len(recent))
        if callback is not None:
            callback(step + 1, losses)
    return losses


def _noisy_batch(x0, schedule, gen):
    t = torch.randint(1, schedule.T + 1, (x0.shape[0],), generator=gen)
    eps = torch.randn(x0.shape, generator=gen)
    return forward_diffuse(x0, t, eps, schedule), t, eps


def train_base(
    images: torch.Tensor,
    captions: list[str],
    schedule: NoiseSchedule,
    config: ModelConfig,
    hyperparams: TrainHyperparams,
    rng,
    *,
    init: Weights | None = None,
    callback: Callable | None = None,
) -> TrainResult:
    """Fit the text-conditioned base model on (image, caption) pairs with the noise-MSE loss.

    ``images`` are (N, C, H, W) in [-1, 1]; segmap records go in as images too.
    """
    if len(images) == 0 or len(images) != len(captions):
        raise ValueError("need a non-empty dataset with one caption per image")
    gen = _generator(rng)
    weights = init if init is not None else Weights.init(config, seed=int(torch.randint(0, 2**31 - 1, (1,), generator=gen)))
    base = weights.base.train()
    ids, mask = batch_token_ids(captions, config.vocab_size, config.max_tokens)

    def step_fn(idx):
        z_t, t, eps = _noisy_batch(images[idx], schedule, gen)
        text = base.text_encoder.encode_ids(ids[idx], mask[idx])
        return diffusion_loss(eps, base(z_t, t, text))

    losses = _loop(list(base.parameters()), step_fn, len(images), hyperparams, gen, callback, "base")
    base.eval()
    return TrainResult(weights, losses)


def train_control(
    images: torch.Tensor,
    segmaps: torch.Tensor,
    captions: list[str],
    base_weights: Weights,
    schedule: NoiseSchedule,
    hyperparams: TrainHyperparams,
    rng,
    *,
    config: ModelConfig | None = None,
    control: SCPControlNet | None = None,
    callback: Callable | None = None,
) -> TrainResult:
    """Fit the control branch with the base frozen.

    ``segmaps`` are (N, C, H, W) in [0, 1]. A ``config`` differing from the
    base's (e.g. other ``spade_stages``) builds the copy under that config; the
    base tensors are never modified.
    """
    if len(images) == 0 or not (len(images) == len(segmaps) == len(captions)):
        raise ValueError("need a non-empty dataset of aligned images, segmaps and captions")
    gen = _generator(rng)
    base = base_weights.base
    if control is None:
        torch.manual_seed(int(torch.randint(0, 2**31 - 1, (1,), generator=gen)))
        control = SCPControlNet.from_base(base, config)
    base.eval()
    for p in base.parameters():
        p.requires_grad_(False)
    control.train()
    ids, mask = batch_token_ids(captions, base.cfg.vocab_size, base.cfg.max_tokens)

    def step_fn(idx):
        z_t, t, eps = _noisy_batch(images[idx], schedule, gen)
        with torch.no_grad():
            text = base.text_encoder.encode_ids(ids[idx], mask[idx])
        residuals, mid = control(z_t, t, text, segmaps[idx])
        return diffusion_loss(eps, base(z_t, t, text, residuals, mid))

    try:
        losses = _loop(list(control.parameters()), step_fn, len(images), hyperparams, gen, callback, "control")
    finally:
        for p in base.parameters():
            p.requires_grad_(True)
    control.eval()
    return TrainResult(Weights(base, control), losses)


# -- checkpoints -------------------------------------------------------------------
#
# safetensors layout: 8-byte little-endian header length, a JSON header mapping
# each tensor name to {dtype, shape, data_offsets: [begin, end]} (offsets into
# the byte buffer that follows), plus "__metadata__". The metadata map is
# written in arbitrary key order, so everything goes under one key as sorted
# JSON to keep checkpoint bytes reproducible.
# Base tensors are prefixed "base.", control tensors "control.".


METADATA_KEY = "curvexpand"


def save_weights(weights: Weights, path: str | Path, extra: dict | None = None) -> None:
    tensors = {f"base.{k}": v.contiguous() for k, v in weights.base.state_dict().items()}
    meta = {"config": weights.base.cfg.to_json(), "has_control": "0"}
    if weights.control is not None:
        tensors.update({f"control.{k}": v.contiguous() for k, v in weights.control.state_dict().items()})
        meta["control_config"] = weights.control.cfg.to_json()
        meta["has_control"] = "1"
    if extra:
        meta.update({k: json.dumps(v, sort_keys=True) for k, v in extra.items()})
    save_file(tensors, str(path), metadata={METADATA_KEY: json.dumps(meta, sort_keys=True)})


def read_metadata(path: str | Path) -> dict[str, str]:
    with safe_open(str(path), framework="pt") as fh:
        meta = fh.metadata() or {}
    return json.loads(meta[METADATA_KEY]) if METADATA_KEY in meta else dict(meta)


def load_weights(path: str | Path) -> Weights:
    meta = read_metadata(path)
    tensors = load_file(str(path))
    base = BaseUNet(ModelConfig.from_json(meta["config"]))
    base.load_state_dict({k[5:]: v for k, v in tensors.items() if k.startswith("base.")})
    base.eval()
    control = None
    if meta.get("has_control") == "1":
        control = SCPControlNet(ModelConfig.from_json(meta["control_config"]))
        control.load_state_dict({k[8:]: v for k, v in tensors.items() if k.startswith("control.")})
        control.eval()
    return Weights(base, control)
