"""Variance-preserving forward noising schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

DEFAULT_TIMESTEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 2e-2


@dataclass
class NoiseSchedule:
    """Per-timestep noise rates. Index t runs 1..timesteps; alpha_bar(0) == 1."""

    betas: np.ndarray  # (T,) float64
    alpha_bars: np.ndarray  # (T,) float64, cumulative products of 1 - beta

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.timesteps:
            raise ValueError(f"timestep {t} outside [0, {self.timesteps}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def validate(self) -> None:
        """Check structural coherence. make_schedule output always passes."""
        if len(self.betas) != len(self.alpha_bars) or len(self.betas) == 0:
            raise ValueError("betas and alpha_bars must be equal-length and non-empty")
        if not np.all((self.betas > 0.0) & (self.betas < 1.0)):
            raise ValueError("betas must lie in (0, 1)")
        if not np.all(np.diff(self.alpha_bars) < 0.0) and len(self.alpha_bars) > 1:
            raise ValueError("alpha_bars must be strictly decreasing")
        expected = np.cumprod(1.0 - self.betas)
        if not np.allclose(self.alpha_bars, expected, rtol=0, atol=1e-12):
            raise ValueError("alpha_bars inconsistent with cumulative product of 1 - beta")


def make_schedule(
    timesteps: int = DEFAULT_TIMESTEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Linear beta schedule from beta_start to beta_end over the given steps."""
    if timesteps < 1:
        raise ValueError(f"timesteps must be >= 1, got {timesteps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    sched = NoiseSchedule(betas=betas, alpha_bars=np.cumprod(1.0 - betas))
    sched.validate()
    return sched


def add_noise(z: torch.Tensor, eps: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    """Noise a clean latent to level t: sqrt(abar_t) * z + sqrt(1 - abar_t) * eps."""
    if z.shape != eps.shape:
        raise ValueError(f"latent shape {tuple(z.shape)} does not match noise shape {tuple(eps.shape)}")
    if not 1 <= t <= sched.timesteps:
        raise ValueError(f"timestep {t} outside [1, {sched.timesteps}]")
    abar = sched.alpha_bar(t)
    return math.sqrt(abar) * z + math.sqrt(1.0 - abar) * eps
