"""Noise schedule construction, forward noising, and reverse samplers.

Shared by both diffusion stages. The schedule is a plain table of
beta/alpha/alpha_bar values; samplers are free functions so any callable
with the denoiser signature can drive them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch

__all__ = [
    "ScheduleError",
    "NoiseSchedule",
    "NoisedSample",
    "build_linear_schedule",
    "q_sample",
    "ddpm_step",
    "ddim_timesteps",
    "ddim_sample",
]


class ScheduleError(ValueError):
    """Invalid schedule parameters or timestep usage."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed diffusion tables. Immutable; safe to share across threads."""

    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor

    @property
    def T(self) -> int:
        return self.betas.shape[0]

    def check_t(self, t: int) -> None:
        if not 0 <= t < self.T:
            raise ScheduleError(f"timestep {t} outside [0, {self.T})")


@dataclass(frozen=True)
class NoisedSample:
    z_t: torch.Tensor
    eps: torch.Tensor
    t: int


def build_linear_schedule(
    T: int, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
    """Linearly spaced betas from beta_start to beta_end inclusive."""
    if T < 2:
        raise ScheduleError(f"T must be >= 2, got {T}")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ScheduleError(
            f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alphas = 1.0 - betas
    alpha_bars = torch.cumprod(alphas, dim=0)
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ScheduleError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def q_sample(z0: torch.Tensor, t: int, eps: torch.Tensor, sched: NoiseSchedule) -> NoisedSample:
    """Forward-noise z0 to timestep t with the given noise draw."""
    sched.check_t(t)
    _check_same_shape(z0, eps, "q_sample")
    ab = sched.alpha_bars[t].to(z0.dtype)
    z_t = torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps
    return NoisedSample(z_t=z_t, eps=eps, t=t)


def ddpm_step(
    z_t: torch.Tensor,
    eps_pred: torch.Tensor,
    t: int,
    sched: NoiseSchedule,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """One ancestral reverse step z_t -> z_{t-1}.

    Posterior mean with sigma_t = sqrt(beta_t); at t=0 the mean is returned
    and `noise` is ignored.
    """
    sched.check_t(t)
    _check_same_shape(z_t, eps_pred, "ddpm_step")
    dt = z_t.dtype
    beta = sched.betas[t].to(dt)
    alpha = sched.alphas[t].to(dt)
    ab = sched.alpha_bars[t].to(dt)
    mean = (z_t - beta / torch.sqrt(1.0 - ab) * eps_pred) / torch.sqrt(alpha)
    if t == 0:
        return mean
    if noise is None:
        raise ScheduleError("noise required for t > 0")
    _check_same_shape(z_t, noise, "ddpm_step noise")
    return mean + torch.sqrt(beta) * noise


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Descending subsequence of [0, T) with `steps` entries, endpoints included."""
    if not 1 <= steps <= T:
        raise ScheduleError(f"steps must be in [1, {T}], got {steps}")
    if steps == 1:
        return [T - 1]
    ts = torch.linspace(0, T - 1, steps).round().to(torch.int64)
    return sorted(set(ts.tolist()), reverse=True)


def ddim_sample(
    model: Callable[[torch.Tensor, object, int], torch.Tensor],
    z_T: torch.Tensor,
    conditioning: object,
    sched: NoiseSchedule,
    steps: int,
) -> torch.Tensor:
    """Deterministic reverse trajectory (eta = 0) returning the predicted z_0.

    Pure function of (z_T, conditioning, steps): no noise is drawn.
    """
    taus = ddim_timesteps(sched.T, steps)
    z = z_T
    for i, t in enumerate(taus):
        eps = model(z, conditioning, t)
        ab = sched.alpha_bars[t].to(z.dtype)
        z0_hat = (z - torch.sqrt(1.0 - ab) * eps) / torch.sqrt(ab)
        if i + 1 == len(taus):
            return z0_hat
        t_next = taus[i + 1]
        ab_next = sched.alpha_bars[t_next].to(z.dtype)
        z = torch.sqrt(ab_next) * z0_hat + torch.sqrt(1.0 - ab_next) * eps
    return z
