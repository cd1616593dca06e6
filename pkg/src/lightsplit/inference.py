"""Albedo extraction by iterative decomposition sampling.

Starting from pure noise, each iteration decomposes the current latent into
content and lighting under classifier-free guidance, recomposes them as the
clean-sample estimate, and takes a deterministic DDIM step toward the next
noise level. The content head of the final iteration, averaged over several
sampling seeds, decodes to the albedo prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .autoencoder import AutoencoderParams, decode, encode
from .denoiser import DenoiserParams, LatentDecomposition, denoise_decompose
from .schedule import NoiseSchedule, make_schedule


@dataclass
class InferenceConfig:
    ddim_steps: int = 50
    guidance_scale: float = 1.5
    n_samples: int = 10
    eta: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.ddim_steps < 1:
            raise ValueError(f"ddim_steps must be >= 1, got {self.ddim_steps}")
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.eta < 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if not math.isfinite(self.guidance_scale):
            raise ValueError("guidance_scale must be finite")


def ddim_step(
    z_t: torch.Tensor,
    x0_pred: torch.Tensor,
    t: int,
    t_prev: int,
    sched: NoiseSchedule,
    eta: float = 0.0,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """One DDIM update from level t to level t_prev (0 means fully clean).

    eta=0 is deterministic. For eta>0, fresh noise is drawn from the
    generator unless an explicit noise tensor is supplied.
    """
    if z_t.shape != x0_pred.shape:
        raise ValueError(f"z_t shape {tuple(z_t.shape)} does not match x0_pred {tuple(x0_pred.shape)}")
    if not 0 <= t_prev < t <= sched.timesteps:
        raise ValueError(f"need 0 <= t_prev < t <= {sched.timesteps}, got t={t}, t_prev={t_prev}")
    if eta < 0:
        raise ValueError(f"eta must be non-negative, got {eta}")
    abar_t = sched.alpha_bar(t)
    abar_prev = sched.alpha_bar(t_prev)
    if abar_t >= 1.0:
        raise FloatingPointError(f"alpha_bar({t}) >= 1 leaves no noise to remove")
    eps_hat = (z_t - math.sqrt(abar_t) * x0_pred) / math.sqrt(1.0 - abar_t)
    sigma = eta * math.sqrt((1.0 - abar_prev) / (1.0 - abar_t)) * math.sqrt(max(1.0 - abar_t / abar_prev, 0.0))
    out = math.sqrt(abar_prev) * x0_pred + math.sqrt(max(1.0 - abar_prev - sigma**2, 0.0)) * eps_hat
    if sigma > 0.0 and t_prev > 0:
        if noise is None:
            noise = torch.randn(z_t.shape, generator=generator, dtype=z_t.dtype)
        out = out + sigma * noise
    return out


def apply_guidance(
    cond_dec: LatentDecomposition, uncond_dec: LatentDecomposition, scale: float
) -> LatentDecomposition:
    """Classifier-free combination per head: uncond + scale * (cond - uncond)."""
    return LatentDecomposition(
        albedo=uncond_dec.albedo + scale * (cond_dec.albedo - uncond_dec.albedo),
        lighting=uncond_dec.lighting + scale * (cond_dec.lighting - uncond_dec.lighting),
    )


def guided_decompose(
    noisy: torch.Tensor,
    t: int,
    cond: torch.Tensor | None,
    scale: float,
    params: DenoiserParams,
) -> LatentDecomposition:
    """Decompose under guidance: conditional and unconditional passes combined."""
    if cond is None:
        return denoise_decompose(noisy, t, None, params)
    cond_dec = denoise_decompose(noisy, t, cond, params)
    uncond_dec = denoise_decompose(noisy, t, None, params)
    return apply_guidance(cond_dec, uncond_dec, scale)


def timestep_sequence(timesteps: int, ddim_steps: int) -> list[int]:
    """Uniform-stride descending subsequence that always starts at timesteps and ends at 1."""
    if ddim_steps < 1:
        raise ValueError(f"ddim_steps must be >= 1, got {ddim_steps}")
    raw = np.round(np.linspace(timesteps, 1, min(ddim_steps, timesteps))).astype(int)
    seq: list[int] = []
    for t in raw:
        if not seq or t < seq[-1]:
            seq.append(int(t))
    return seq


def _batched_guided_decompose(
    z: torch.Tensor, t: int, cond_cf: torch.Tensor | None, scale: float, params: DenoiserParams
) -> tuple[torch.Tensor, torch.Tensor]:
    """z is (n, c, h, w); returns guided (albedo, lighting) in the same layout."""
    c = params.config.latent_channels
    n = z.shape[0]
    t_vec = torch.full((n,), t, dtype=torch.long)
    zero_cond = torch.zeros_like(z)
    with torch.no_grad():
        if cond_cf is None:
            out = params.module(torch.cat([z, zero_cond], dim=1), t_vec)
            return out[:, :c], out[:, c:]
        x = torch.cat(
            [torch.cat([z, cond_cf.expand_as(z)], dim=1), torch.cat([z, zero_cond], dim=1)], dim=0
        )
        out = params.module(x, torch.cat([t_vec, t_vec], dim=0))
        cond_out, uncond_out = out[:n], out[n:]
        guided = uncond_out + scale * (cond_out - uncond_out)
        return guided[:, :c], guided[:, c:]


def _sample_batch(
    cond_raw: torch.Tensor | None,
    config: InferenceConfig,
    params: DenoiserParams,
    sched: NoiseSchedule,
    seeds: list[int],
    allow_untrained: bool,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Run the decomposition sampler for several seeds at once.

    Returns final (albedo, lighting) latents in raw VAE scale, shape (n, h, w, c).
    """
    config.validate()
    if not params.trained and not allow_untrained:
        raise RuntimeError("denoiser params are untrained; pass allow_untrained=True to sample anyway")
    params.module.eval()
    scale_const = params.latent_scale
    c = params.config.latent_channels
    if cond_raw is not None:
        if cond_raw.ndim != 3 or cond_raw.shape[2] != c:
            raise ValueError(f"cond latent must have shape (h, w, {c}), got {tuple(cond_raw.shape)}")
        cond_cf = (cond_raw / scale_const).permute(2, 0, 1)[None].float()
        h, w = cond_raw.shape[:2]
    else:
        raise ValueError("conditioning latent is required to extract an albedo")

    gens = [torch.Generator().manual_seed(s) for s in seeds]
    z = torch.stack([torch.randn(c, h, w, generator=g) for g in gens])
    seq = timestep_sequence(sched.timesteps, config.ddim_steps)
    albedo_cf = lighting_cf = None
    for idx, t in enumerate(seq):
        t_prev = seq[idx + 1] if idx + 1 < len(seq) else 0
        albedo_cf, lighting_cf = _batched_guided_decompose(z, t, cond_cf, config.guidance_scale, params)
        if not torch.isfinite(albedo_cf).all() or not torch.isfinite(lighting_cf).all():
            raise FloatingPointError(f"non-finite decomposition at timestep {t}")
        x0 = albedo_cf + lighting_cf
        noise = None
        if config.eta > 0 and t_prev > 0:
            noise = torch.stack([torch.randn(c, h, w, generator=g) for g in gens])
        z = ddim_step(z, x0, t, t_prev, sched, eta=config.eta, noise=noise)
        if not torch.isfinite(z).all():
            raise FloatingPointError(f"non-finite sampler state after timestep {t}")
    albedo = albedo_cf.permute(0, 2, 3, 1) * scale_const
    lighting = lighting_cf.permute(0, 2, 3, 1) * scale_const
    return albedo, lighting


def sample_albedo_latent(
    cond: torch.Tensor,
    config: InferenceConfig,
    params: DenoiserParams,
    sched: NoiseSchedule | None = None,
    *,
    allow_untrained: bool = False,
    return_lighting: bool = False,
):
    """Sample one albedo latent conditioned on an image latent (raw VAE scale).

    The returned latent is the content head of the final sampler iteration.
    With return_lighting=True the final lighting head is returned as well.
    """
    if sched is None:
        sched = make_schedule(params.config.timesteps)
    albedo, lighting = _sample_batch(cond, config, params, sched, [config.seed], allow_untrained)
    return (albedo[0], lighting[0]) if return_lighting else albedo[0]


@dataclass
class AlbedoPrediction:
    """Decoded albedo plus the sample-averaged latents behind it (raw VAE scale)."""

    albedo: np.ndarray
    albedo_latent: torch.Tensor
    lighting_latent: torch.Tensor


def predict_albedo_full(
    image: np.ndarray,
    config: InferenceConfig,
    ae_params: AutoencoderParams,
    den_params: DenoiserParams,
    sched: NoiseSchedule | None = None,
    *,
    allow_untrained: bool = False,
) -> AlbedoPrediction:
    """Full pipeline: encode, sample n_samples decompositions, average the
    latents over samples, decode the content average to an albedo image."""
    config.validate()
    if sched is None:
        sched = make_schedule(den_params.config.timesteps)
    cond = encode(image, ae_params)
    seeds = [config.seed * 100003 + s for s in range(config.n_samples)]
    albedo, lighting = _sample_batch(cond, config, den_params, sched, seeds, allow_untrained)
    albedo_latent = albedo.mean(dim=0)
    return AlbedoPrediction(
        albedo=decode(albedo_latent, ae_params),
        albedo_latent=albedo_latent,
        lighting_latent=lighting.mean(dim=0),
    )


def predict_albedo(
    image: np.ndarray,
    config: InferenceConfig,
    ae_params: AutoencoderParams,
    den_params: DenoiserParams,
    sched: NoiseSchedule | None = None,
    *,
    allow_untrained: bool = False,
) -> np.ndarray:
    """Like predict_albedo_full but returns only the decoded albedo image."""
    return predict_albedo_full(
        image, config, ae_params, den_params, sched, allow_untrained=allow_untrained
    ).albedo
