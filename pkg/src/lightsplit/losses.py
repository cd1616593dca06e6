"""Training losses for the additive latent decomposition.

All losses are mean-over-elements so magnitudes are comparable across
latent sizes. The hinge regularizer penalizes positive lighting entries,
which biases the content head toward the bright end of the illumination
range; dropping it leaves the decomposition unidentifiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch

from .denoiser import LatentDecomposition

DEFAULT_LAMBDA = 0.5


@dataclass
class LossTerms:
    relight: torch.Tensor
    albedo: torch.Tensor
    consistency: torch.Tensor
    invariant: torch.Tensor
    reg: torch.Tensor

    def detached(self) -> dict[str, float]:
        return {
            "relight": self.relight.detach().item(),
            "albedo": self.albedo.detach().item(),
            "consistency": self.consistency.detach().item(),
            "invariant": self.invariant.detach().item(),
            "reg": self.reg.detach().item(),
        }


def _mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a - b) ** 2).mean()


def gaussian_kernel1d(sigma: float, radius: int) -> torch.Tensor:
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    k = torch.exp(-(x**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _pad_mirror(x: torch.Tensor, radius: int) -> torch.Tensor:
    # edge-repeating reflection; with a symmetric kernel this preserves sums
    top = x[..., :radius, :].flip(-2)
    bottom = x[..., -radius:, :].flip(-2)
    x = torch.cat([top, x, bottom], dim=-2)
    left = x[..., :, :radius].flip(-1)
    right = x[..., :, -radius:].flip(-1)
    return torch.cat([left, x, right], dim=-1)


def blur_lighting(z: torch.Tensor, sigma: float) -> torch.Tensor:
    """Channelwise Gaussian blur over the spatial dims of a (..., h, w, c) latent.

    sigma == 0 is the identity. Mirror padding with a symmetric kernel keeps
    the per-channel spatial mean unchanged. Differentiable.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return z
    if z.ndim < 3:
        raise ValueError(f"latent must have shape (..., h, w, c), got {tuple(z.shape)}")
    lead = z.shape[:-3]
    h, w, c = z.shape[-3:]
    radius = max(1, math.ceil(3.0 * sigma))
    radius = min(radius, h, w)
    kernel = gaussian_kernel1d(sigma, radius).to(z.dtype)
    x = z.reshape(-1, h, w, c).permute(0, 3, 1, 2).reshape(-1, 1, h, w)
    x = _pad_mirror(x, radius)
    x = torch.nn.functional.conv2d(x, kernel.view(1, 1, -1, 1))
    x = torch.nn.functional.conv2d(x, kernel.view(1, 1, 1, -1))
    x = x.reshape(-1, c, h, w).permute(0, 2, 3, 1)
    return x.reshape(*lead, h, w, c)


def loss_relight(z_target: torch.Tensor, dec: LatentDecomposition) -> torch.Tensor:
    """Squared error between the target latent and the recomposed prediction."""
    return _mse(z_target, dec.albedo + dec.lighting)


def loss_albedo(albedos: Sequence[torch.Tensor]) -> torch.Tensor:
    """Mean pairwise squared distance between content predictions."""
    if len(albedos) < 2:
        raise ValueError(f"need at least 2 content predictions, got {len(albedos)}")
    pairs = []
    for i in range(len(albedos)):
        for j in range(i + 1, len(albedos)):
            pairs.append(_mse(albedos[i], albedos[j]))
    return torch.stack(pairs).mean()


def loss_consistency(z_source: torch.Tensor, albedo: torch.Tensor, lighting: torch.Tensor) -> torch.Tensor:
    """Source latent must equal its own content plus its cross-predicted lighting."""
    return _mse(z_source, albedo + lighting)


def loss_invariant(z_target: torch.Tensor, albedo: torch.Tensor) -> torch.Tensor:
    """Anchor the content prediction to the target image latent."""
    return _mse(z_target, albedo)


def loss_reg(lighting: torch.Tensor) -> torch.Tensor:
    """Hinge on positive lighting entries, mean over all elements."""
    return torch.clamp(lighting, min=0).mean()


def total_loss(parts: LossTerms, lam: float = DEFAULT_LAMBDA) -> torch.Tensor:
    """Weighted sum of the five terms. Non-finite terms fail loudly."""
    for name in ("relight", "albedo", "consistency", "invariant", "reg"):
        value = getattr(parts, name)
        if not torch.isfinite(value).all():
            raise FloatingPointError(f"loss term '{name}' is not finite: {value.detach().item()}")
    return parts.relight + parts.albedo + parts.consistency + lam * (parts.invariant + parts.reg)
