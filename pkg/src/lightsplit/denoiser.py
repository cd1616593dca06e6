"""Dual-head conditional denoiser over image latents.

The network takes a noisy target latent concatenated channelwise with a
conditioning latent (zeros when unconditioned) and predicts two clean
latents at once: a content part shared across illuminations and a lighting
part specific to the target. Predictions are clean-sample estimates, not
noise estimates; the two heads are the first and second halves of the
output channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

DENOISER_VERSION = 1


@dataclass
class DenoiserConfig:
    latent_channels: int = 4
    widths: tuple[int, ...] = (48, 96)
    blocks_per_level: int = 2
    time_dim: int = 128
    timesteps: int = 1000
    cond_dropout_prob: float = 0.1


@dataclass
class LatentDecomposition:
    """Additive split of an image latent: latent ~ albedo + lighting."""

    albedo: torch.Tensor
    lighting: torch.Tensor


@dataclass
class DenoiserParams:
    module: nn.Module
    config: DenoiserConfig
    trained: bool = False
    latent_scale: float = 1.0  # training-set latent std; diffusion ops work on z / latent_scale
    version: int = DENOISER_VERSION


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic fixed-frequency embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1))
    freqs = freqs.to(t.device)
    angles = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, ch_in: int, ch_out: int, time_dim: int):
        super().__init__()
        groups = math.gcd(8, ch_in)
        self.norm1 = nn.GroupNorm(groups, ch_in)
        self.conv1 = nn.Conv2d(ch_in, ch_out, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, ch_out)
        self.norm2 = nn.GroupNorm(math.gcd(8, ch_out), ch_out)
        self.conv2 = nn.Conv2d(ch_out, ch_out, 3, padding=1)
        self.skip = nn.Conv2d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(nn.functional.silu(temb))[:, :, None, None]
        h = self.conv2(nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class DualHeadUNet(nn.Module):
    """U-shaped convnet: input 2c channels (noisy + cond), output 2c (two heads)."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        c = config.latent_channels
        widths = config.widths
        td = config.time_dim
        self.config = config
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.stem = nn.Conv2d(2 * c, widths[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for lvl, w in enumerate(widths):
            ch_in = widths[max(lvl - 1, 0)]
            blocks = nn.ModuleList()
            for b in range(config.blocks_per_level):
                blocks.append(ResBlock(ch_in if b == 0 else w, w, td))
            self.down_blocks.append(blocks)
            if lvl < len(widths) - 1:
                self.downsamples.append(nn.Conv2d(w, w, 3, stride=2, padding=1))

        self.mid1 = ResBlock(widths[-1], widths[-1], td)
        self.mid2 = ResBlock(widths[-1], widths[-1], td)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for lvl in reversed(range(len(widths) - 1)):
            w = widths[lvl]
            w_below = widths[lvl + 1]
            self.upsamples.append(nn.Conv2d(w_below, w, 3, padding=1))
            blocks = nn.ModuleList()
            for b in range(config.blocks_per_level):
                blocks.append(ResBlock(2 * w if b == 0 else w, w, td))
            self.up_blocks.append(blocks)

        self.out_norm = nn.GroupNorm(math.gcd(8, widths[0]), widths[0])
        self.out_conv = nn.Conv2d(widths[0], 2 * c, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        temb = self.time_mlp(sinusoidal_embedding(t, self.config.time_dim).to(x.dtype))
        h = self.stem(x)
        skips = []
        for lvl, blocks in enumerate(self.down_blocks):
            for block in blocks:
                h = block(h, temb)
            if lvl < len(self.down_blocks) - 1:
                skips.append(h)
                h = self.downsamples[lvl](h)
        h = self.mid2(self.mid1(h, temb), temb)
        for i, blocks in enumerate(self.up_blocks):
            h = self.upsamples[i](nn.functional.interpolate(h, scale_factor=2, mode="nearest"))
            h = torch.cat([h, skips.pop()], dim=1)
            for block in blocks:
                h = block(h, temb)
        return self.out_conv(nn.functional.silu(self.out_norm(h)))


def init_denoiser(config: DenoiserConfig, seed: int = 0) -> DenoiserParams:
    """Build an untrained denoiser with weights determined by the seed."""
    if config.latent_channels < 1:
        raise ValueError(f"latent_channels must be positive, got {config.latent_channels}")
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        module = DualHeadUNet(config)
    module.eval()
    return DenoiserParams(module=module, config=config, trained=False)


def _to_batched(z: torch.Tensor, c: int, name: str) -> torch.Tensor:
    if z.ndim != 3 or z.shape[2] != c:
        raise ValueError(f"{name} must have shape (h, w, {c}), got {tuple(z.shape)}")
    return z.permute(2, 0, 1)[None]


def denoise_decompose(
    noisy: torch.Tensor,
    t: int,
    cond: torch.Tensor | None,
    params: DenoiserParams,
) -> LatentDecomposition:
    """Run the dual-head denoiser on one latent. cond=None means unconditioned."""
    cfg = params.config
    if not 1 <= t <= cfg.timesteps:
        raise ValueError(f"timestep {t} outside [1, {cfg.timesteps}]")
    c = cfg.latent_channels
    x = _to_batched(noisy, c, "noisy")
    if cond is None:
        cond_b = torch.zeros_like(x)
    else:
        if cond.shape != noisy.shape:
            raise ValueError(f"cond shape {tuple(cond.shape)} does not match noisy {tuple(noisy.shape)}")
        cond_b = _to_batched(cond, c, "cond")
    params.module.eval()
    with torch.no_grad():
        out = params.module(torch.cat([x, cond_b], dim=1), torch.tensor([t]))
    albedo = out[0, :c].permute(1, 2, 0)
    lighting = out[0, c:].permute(1, 2, 0)
    return LatentDecomposition(albedo=albedo, lighting=lighting)
