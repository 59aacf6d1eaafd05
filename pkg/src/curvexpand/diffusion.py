"""Noise schedules, forward/reverse diffusion and the noise-prediction objective.

Forward process (closed form):
    z_t = sqrt(abar_t) * z_0 + sqrt(1 - abar_t) * eps

Per-step kernel:
    z_t = sqrt(1 - beta_t) * z_{t-1} + sqrt(beta_t) * eps_t

Reverse step (fixed variance from the schedule):
    z_{t-1} = (z_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t) + sigma_t * noise

Timesteps are 1-indexed: t = 1..T, with abar_0 = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn


class ScheduleError(ValueError):
    """Invalid noise-schedule configuration."""


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    T: int
    betas: np.ndarray
    alpha_bars: np.ndarray
    test_mode: bool = False
    _torch_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    def alpha_bar(self, t: int) -> float:
        """abar_t with abar_0 = 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def posterior_variance(self, t: int) -> float:
        """beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t; zero at t = 1."""
        beta = float(self.betas[t - 1])
        denom = 1.0 - self.alpha_bar(t)
        if denom == 0.0:
            return 0.0
        return (1.0 - self.alpha_bar(t - 1)) / denom * beta

    def table(self, name: str, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Per-step coefficient table, index 0 holds t = 0."""
        key = (name, dtype)
        if key not in self._torch_cache:
            abar = np.concatenate([[1.0], self.alpha_bars])
            if name == "sqrt_abar":
                values = np.sqrt(abar)
            elif name == "sqrt_one_minus_abar":
                values = np.sqrt(1.0 - abar)
            else:
                raise KeyError(name)
            self._torch_cache[key] = torch.as_tensor(values, dtype=dtype)
        return self._torch_cache[key]


def make_schedule(
    kind: str = "linear",
    T: int = 1000,
    beta_min: float = 1e-4,
    beta_max: float = 0.02,
    *,
    test_mode: bool = False,
) -> NoiseSchedule:
    """Build a linear or constant beta schedule.

    ``test_mode`` permits beta = 0 (a zero-noise schedule) for exact identity
    checks; it is rejected otherwise.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ScheduleError(f"T must be an integer >= 1, got {T!r}")
    lower_ok = beta_min >= 0.0 if test_mode else beta_min > 0.0
    if not (lower_ok and beta_min <= beta_max < 1.0):
        raise ScheduleError(
            f"need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
        )
    if kind == "linear":
        betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    elif kind == "constant":
        if beta_min != beta_max:
            raise ScheduleError("constant schedule needs beta_min == beta_max")
        betas = np.full(T, beta_min, dtype=np.float64)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    alpha_bars = np.cumprod(1.0 - betas)
    betas.setflags(write=False)
    alpha_bars.setflags(write=False)
    return NoiseSchedule(kind=kind, T=int(T), betas=betas, alpha_bars=alpha_bars, test_mode=test_mode)


def _check_t(t, schedule: NoiseSchedule) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long)
    if t.numel() and (int(t.min()) < 1 or int(t.max()) > schedule.T):
        raise ValueError(f"timestep out of range [1, {schedule.T}]: {t.tolist()}")
    return t


def _broadcast(coef: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    if coef.dim() == 0:
        return coef
    return coef.view(-1, *([1] * (like.dim() - 1)))


def forward_diffuse(z0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Closed-form noisy latent. ``t`` is an int or a per-batch LongTensor."""
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    t = _check_t(t, schedule)
    a = schedule.table("sqrt_abar", z0.dtype)[t]
    b = schedule.table("sqrt_one_minus_abar", z0.dtype)[t]
    return _broadcast(a, z0) * z0 + _broadcast(b, z0) * eps


def forward_step(z_prev: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """One application of the per-step forward kernel q(z_t | z_{t-1})."""
    t = int(_check_t(t, schedule))
    beta = float(schedule.betas[t - 1])
    return math.sqrt(1.0 - beta) * z_prev + math.sqrt(beta) * eps


def posterior_mean(
    z_t: torch.Tensor, t: int, eps_hat: torch.Tensor, schedule: NoiseSchedule, clip_x0: float | None = None
) -> torch.Tensor:
    """Mean of q(z_{t-1} | z_t, z0) with z0 estimated from ``eps_hat``.

    With ``clip_x0`` the z0 estimate is clamped to [-clip_x0, clip_x0] before
    forming the mean; otherwise the equivalent noise form is used directly.
    """
    beta = float(schedule.betas[t - 1])
    abar = schedule.alpha_bar(t)
    one_minus_abar = 1.0 - abar
    if one_minus_abar == 0.0:
        return z_t.clone()
    if clip_x0 is None:
        coef = 0.0 if beta == 0.0 else beta / math.sqrt(one_minus_abar)
        return (z_t - coef * eps_hat) / math.sqrt(1.0 - beta)
    abar_prev = schedule.alpha_bar(t - 1)
    x0 = ((z_t - math.sqrt(one_minus_abar) * eps_hat) / math.sqrt(abar)).clamp(-clip_x0, clip_x0)
    c_x0 = math.sqrt(abar_prev) * beta / one_minus_abar
    c_zt = math.sqrt(1.0 - beta) * (1.0 - abar_prev) / one_minus_abar
    return c_x0 * x0 + c_zt * z_t


def _noise_like(z: torch.Tensor, rng) -> torch.Tensor:
    # A list of generators draws one slice per batch item so a sample's noise
    # does not depend on what else is in the batch.
    if isinstance(rng, (list, tuple)):
        if len(rng) != z.shape[0]:
            raise ValueError("need one generator per batch item")
        return torch.stack([torch.randn(z.shape[1:], generator=g, dtype=z.dtype) for g in rng])
    return torch.randn(z.shape, generator=rng, dtype=z.dtype)


def reverse_step(
    z_t: torch.Tensor,
    t: int,
    eps_hat: torch.Tensor,
    schedule: NoiseSchedule,
    rng: torch.Generator | Sequence[torch.Generator] | None,
    clip_x0: float | None = None,
) -> torch.Tensor:
    """Draw z_{t-1} from the fixed-variance posterior; no noise is added at t = 1."""
    if eps_hat.shape != z_t.shape:
        raise ValueError(f"eps_hat shape {tuple(eps_hat.shape)} != z_t shape {tuple(z_t.shape)}")
    t = int(_check_t(t, schedule))
    mean = posterior_mean(z_t, t, eps_hat, schedule, clip_x0)
    if t == 1:
        return mean
    var = schedule.posterior_variance(t)
    if var == 0.0:
        return mean
    return mean + math.sqrt(var) * _noise_like(z_t, rng)


def diffusion_loss(eps: torch.Tensor, eps_hat: torch.Tensor) -> torch.Tensor:
    if eps.shape != eps_hat.shape:
        raise ValueError(f"shape mismatch {tuple(eps.shape)} vs {tuple(eps_hat.shape)}")
    return torch.mean((eps - eps_hat) ** 2)


class IdentityAutoencoder:
    """Pixel-space diffusion: encode and decode are the identity."""

    identity = True
    latent_scale = 1

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return x

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return z


class ConvAutoencoder(nn.Module):
    """Small convolutional autoencoder with a 2x-downsampled latent map."""

    identity = False
    latent_scale = 2

    def __init__(self, channels: int = 1, latent_channels: int = 4, hidden: int = 16):
        super().__init__()
        self.encoder = nn.Sequential(
            nn.Conv2d(channels, hidden, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, latent_channels, 3, stride=2, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(latent_channels, hidden, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(hidden, channels, 3, padding=1),
            nn.Tanh(),
        )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z)

    def fit(self, images: torch.Tensor, steps: int = 500, lr: float = 1e-3, batch_size: int = 16, seed: int = 0):
        """Reconstruction training; returns the loss trajectory."""
        gen = torch.Generator().manual_seed(seed)
        opt = torch.optim.Adam(self.parameters(), lr=lr)
        losses = []
        for _ in range(steps):
            idx = torch.randint(0, images.shape[0], (batch_size,), generator=gen)
            x = images[idx]
            loss = torch.mean((self.decode(self.encode(x)) - x) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss))
        return losses


Predictor = Callable[[torch.Tensor, torch.Tensor, object], torch.Tensor]


@torch.no_grad()
def sample_loop(
    predictor: Predictor,
    conditioning,
    schedule: NoiseSchedule,
    steps: int,
    rng: torch.Generator | Sequence[torch.Generator],
    shape: tuple[int, ...] | None = None,
    *,
    z_init: torch.Tensor | None = None,
    autoencoder=None,
    clip_x0: float | None = None,
) -> torch.Tensor:
    """Ancestral sampling from t = steps down to 1, then decode.

    ``predictor(z_t, t_batch, conditioning)`` returns the noise estimate.
    Starts from ``z_init`` when given, otherwise from a standard normal draw
    of ``shape``. ``clip_x0`` bounds the intermediate clean-sample estimates
    (pixel-space data lives in [-1, 1]).
    """
    if not 1 <= steps <= schedule.T:
        raise ValueError(f"steps must be in [1, {schedule.T}], got {steps}")
    autoencoder = autoencoder or IdentityAutoencoder()
    if z_init is None:
        if shape is None:
            raise ValueError("need shape or z_init")
        z = _noise_like(torch.empty(shape), rng)
    else:
        z = z_init.clone()
    batch = z.shape[0]
    for t in range(steps, 0, -1):
        t_batch = torch.full((batch,), t, dtype=torch.long)
        eps_hat = predictor(z, t_batch, conditioning)
        z = reverse_step(z, t, eps_hat, schedule, rng, clip_x0)
        if not torch.isfinite(z).all():
            raise FloatingPointError(f"non-finite latent at t={t}")
    return autoencoder.decode(z)
