"""Relighting-as-surrogate training for the dual-head denoiser.

Each step draws scene pairs (z_i, z_j), noises each side, and runs two
cross-conditioned passes: denoise noisy z_j conditioned on z_i and vice
versa. The albedo heads of both passes are tied together, recompositions
must match their targets, and the lighting heads are stochastically
blurred before any loss is computed so high-frequency content cannot hide
in them. Only the denoiser is updated; the autoencoder never appears here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import torch

from . import losses as L
from .checkpoint import load_checkpoint, load_state_from_numpy, save_checkpoint, state_to_numpy
from .denoiser import (
    DENOISER_VERSION,
    DenoiserConfig,
    DenoiserParams,
    DualHeadUNet,
    LatentDecomposition,
    init_denoiser,
)
from .losses import LossTerms, total_loss
from .schedule import NoiseSchedule, make_schedule

LOG_COLUMNS = ["step", "L_relight", "L_albedo", "L_consistency", "L_invariant", "L_reg", "total"]


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_size: int = 16
    learning_rate: float = 1e-4
    lam: float = 0.5  # weight on the invariant + reg terms; 0 disables both
    blur_prob: float = 0.5
    blur_sigma_range: tuple[float, float] = (0.5, 2.0)
    use_consistency: bool = True
    seed: int = 0
    log_every: int = 50


@dataclass
class TrainState:
    params: DenoiserParams
    opt: torch.optim.Optimizer
    sched: NoiseSchedule
    config: TrainConfig
    gen: torch.Generator
    step: int = 0


def _as_batch(z: torch.Tensor, name: str) -> torch.Tensor:
    if z.ndim == 3:
        return z[None]
    if z.ndim == 4:
        return z
    raise ValueError(f"{name} must have shape (h, w, c) or (B, h, w, c), got {tuple(z.shape)}")


def _as_t_batch(t, batch: int, sched: NoiseSchedule, name: str) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long).reshape(-1)
    if t.numel() == 1 and batch > 1:
        t = t.expand(batch)
    if t.numel() != batch:
        raise ValueError(f"{name} has {t.numel()} entries for batch {batch}")
    if t.min() < 1 or t.max() > sched.timesteps:
        raise ValueError(f"{name} outside [1, {sched.timesteps}]")
    return t


def _noise_to_level(z: torch.Tensor, eps: torch.Tensor, t: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    abar = torch.from_numpy(sched.alpha_bars).to(z.dtype)[t - 1]
    shape = (-1,) + (1,) * (z.ndim - 1)
    return abar.sqrt().reshape(shape) * z + (1.0 - abar).sqrt().reshape(shape) * eps


def _blur_per_sample(e: torch.Tensor, sigmas: torch.Tensor | None) -> torch.Tensor:
    """e is (B, h, w, c); sigmas (B,) with 0 meaning no blur."""
    if sigmas is None:
        return e
    outs = []
    for b in range(e.shape[0]):
        s = float(sigmas[b])
        outs.append(L.blur_lighting(e[b], s) if s > 0 else e[b])
    return torch.stack(outs)


def compute_pair_losses(
    module: torch.nn.Module,
    z_i: torch.Tensor,
    z_j: torch.Tensor,
    t_i,
    t_j,
    eps_i: torch.Tensor,
    eps_j: torch.Tensor,
    sched: NoiseSchedule,
    latent_channels: int,
    *,
    sigma_i: torch.Tensor | None = None,
    sigma_j: torch.Tensor | None = None,
    drop_a: torch.Tensor | None = None,
    drop_b: torch.Tensor | None = None,
) -> LossTerms:
    """Differentiable loss computation for one batch of scene pairs.

    Pass A denoises z_j (noised with eps_j at t_j) conditioned on z_i and
    yields the pair's albedo estimate plus the lighting of j. Pass B is the
    mirror image. sigma_*/drop_* carry the per-sample blur and conditioning
    dropout decisions; None means off.
    """
    z_i, z_j = _as_batch(z_i, "z_i"), _as_batch(z_j, "z_j")
    eps_i, eps_j = _as_batch(eps_i, "eps_i"), _as_batch(eps_j, "eps_j")
    if z_i.shape != z_j.shape or eps_i.shape != z_i.shape or eps_j.shape != z_i.shape:
        raise ValueError("z_i, z_j, eps_i, eps_j must share one shape")
    B = z_i.shape[0]
    c = latent_channels
    if z_i.shape[-1] != c:
        raise ValueError(f"latents must have {c} channels, got {z_i.shape[-1]}")
    t_i = _as_t_batch(t_i, B, sched, "t_i")
    t_j = _as_t_batch(t_j, B, sched, "t_j")

    noisy_j = _noise_to_level(z_j, eps_j, t_j, sched)
    noisy_i = _noise_to_level(z_i, eps_i, t_i, sched)

    def mask(cond: torch.Tensor, drop: torch.Tensor | None) -> torch.Tensor:
        if drop is None:
            return cond
        keep = (~drop.bool()).to(cond.dtype).reshape(-1, 1, 1, 1)
        return cond * keep

    cf = lambda z: z.permute(0, 3, 1, 2)
    x_a = torch.cat([cf(noisy_j), cf(mask(z_i, drop_a))], dim=1)
    x_b = torch.cat([cf(noisy_i), cf(mask(z_j, drop_b))], dim=1)
    out = module(torch.cat([x_a, x_b], dim=0), torch.cat([t_j, t_i], dim=0))
    cl = lambda x: x.permute(0, 2, 3, 1)
    a_i, e_j = cl(out[:B, :c]), cl(out[:B, c:])  # pass A: albedo via cond i, lighting of j
    a_j, e_i = cl(out[B:, :c]), cl(out[B:, c:])  # pass B: albedo via cond j, lighting of i

    e_j = _blur_per_sample(e_j, sigma_j)
    e_i = _blur_per_sample(e_i, sigma_i)

    relight = 0.5 * (
        L.loss_relight(z_j, LatentDecomposition(albedo=a_i, lighting=e_j))
        + L.loss_relight(z_i, LatentDecomposition(albedo=a_j, lighting=e_i))
    )
    albedo = L.loss_albedo([a_i, a_j])
    consistency = 0.5 * (L.loss_consistency(z_i, a_i, e_i) + L.loss_consistency(z_j, a_j, e_j))
    invariant = 0.5 * (L.loss_invariant(z_j, a_i) + L.loss_invariant(z_i, a_j))
    reg = 0.5 * (L.loss_reg(e_j) + L.loss_reg(e_i))
    return LossTerms(relight=relight, albedo=albedo, consistency=consistency, invariant=invariant, reg=reg)


def train_step(
    z_i: torch.Tensor,
    z_j: torch.Tensor,
    t_i,
    t_j,
    eps_i: torch.Tensor,
    eps_j: torch.Tensor,
    state: TrainState,
) -> dict[str, float]:
    """One optimizer update on the denoiser from one batch of scene pairs.

    Noise levels and noise draws are explicit arguments so a step is fully
    reproducible; blur and conditioning-dropout decisions come from the
    state's generator.
    """
    zb_i, zb_j = _as_batch(z_i, "z_i"), _as_batch(z_j, "z_j")
    if torch.equal(zb_i, zb_j):
        raise ValueError("z_i and z_j must be latents of distinct illuminations")
    cfg = state.config
    B = zb_i.shape[0]
    gen = state.gen

    lo, hi = cfg.blur_sigma_range
    if lo > hi or lo < 0:
        raise ValueError(f"invalid blur_sigma_range {cfg.blur_sigma_range}")
    blur_on_j = torch.rand(B, generator=gen) < cfg.blur_prob
    blur_on_i = torch.rand(B, generator=gen) < cfg.blur_prob
    sigma_j = (lo + (hi - lo) * torch.rand(B, generator=gen)) * blur_on_j
    sigma_i = (lo + (hi - lo) * torch.rand(B, generator=gen)) * blur_on_i
    p_drop = state.params.config.cond_dropout_prob
    drop_a = torch.rand(B, generator=gen) < p_drop
    drop_b = torch.rand(B, generator=gen) < p_drop

    module = state.params.module
    module.train()
    parts = compute_pair_losses(
        module,
        zb_i,
        zb_j,
        t_i,
        t_j,
        _as_batch(eps_i, "eps_i"),
        _as_batch(eps_j, "eps_j"),
        state.sched,
        state.params.config.latent_channels,
        sigma_i=sigma_i,
        sigma_j=sigma_j,
        drop_a=drop_a,
        drop_b=drop_b,
    )
    effective = parts if cfg.use_consistency else replace(parts, consistency=torch.zeros(()))
    total = total_loss(effective, lam=cfg.lam)
    state.opt.zero_grad()
    total.backward()
    state.opt.step()
    state.step += 1
    report = parts.detached()
    report["total"] = float(total.detach())
    return report


def compute_latent_scale(scene_latents: list[list[torch.Tensor]]) -> float:
    """Global std of all training image latents; the diffusion side divides by it."""
    flat = torch.cat([z.reshape(-1) for lights in scene_latents for z in lights])
    scale = float(flat.double().std())
    if not math.isfinite(scale) or scale <= 0:
        raise FloatingPointError(f"degenerate latent scale {scale}")
    return scale


def train_denoiser(
    scene_latents: list[list[torch.Tensor]],
    den_config: DenoiserConfig,
    config: TrainConfig,
    log_path: str | Path | None = None,
    progress: bool = False,
) -> tuple[DenoiserParams, list[dict]]:
    """Train a denoiser from per-scene lists of image latents (h, w, c).

    Returns trained params (with the latent normalization constant baked in)
    and the periodic loss log as a list of row dicts.
    """
    if len(scene_latents) < 1 or any(len(lights) < 2 for lights in scene_latents):
        raise ValueError("need at least one scene with at least two illuminations")
    k = len(scene_latents[0])
    if any(len(lights) != k for lights in scene_latents):
        raise ValueError("all scenes must have the same number of illuminations")

    scale = compute_latent_scale(scene_latents)
    stack = torch.stack([torch.stack(lights) for lights in scene_latents]).float() / scale  # (S, K, h, w, c)
    S = stack.shape[0]

    params = init_denoiser(den_config, seed=config.seed)
    params.latent_scale = scale
    sched = make_schedule(den_config.timesteps)
    opt = torch.optim.Adam(params.module.parameters(), lr=config.learning_rate)
    gen = torch.Generator().manual_seed(config.seed)
    state = TrainState(params=params, opt=opt, sched=sched, config=config, gen=gen)

    rows: list[dict] = []
    iterator = range(config.steps)
    if progress:
        from tqdm import tqdm

        iterator = tqdm(iterator, desc="train", leave=False)
    for step in iterator:
        scene_idx = torch.randint(0, S, (config.batch_size,), generator=gen)
        i_idx = torch.randint(0, k, (config.batch_size,), generator=gen)
        j_idx = (i_idx + torch.randint(1, k, (config.batch_size,), generator=gen)) % k
        z_i = stack[scene_idx, i_idx]
        z_j = stack[scene_idx, j_idx]
        t_i = torch.randint(1, sched.timesteps + 1, (config.batch_size,), generator=gen)
        t_j = torch.randint(1, sched.timesteps + 1, (config.batch_size,), generator=gen)
        eps_i = torch.randn(z_i.shape, generator=gen)
        eps_j = torch.randn(z_j.shape, generator=gen)
        report = train_step(z_i, z_j, t_i, t_j, eps_i, eps_j, state)
        if step % config.log_every == 0 or step == config.steps - 1:
            rows.append(
                {
                    "step": step,
                    "L_relight": report["relight"],
                    "L_albedo": report["albedo"],
                    "L_consistency": report["consistency"],
                    "L_invariant": report["invariant"],
                    "L_reg": report["reg"],
                    "total": report["total"],
                }
            )
    params.module.eval()
    params.trained = True
    if log_path is not None:
        write_training_log(rows, log_path)
    return params, rows


def write_training_log(rows: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def save_denoiser(params: DenoiserParams, path) -> None:
    cfg = asdict(params.config)
    cfg["widths"] = list(cfg["widths"])
    save_checkpoint(
        path,
        kind="denoiser",
        version=DENOISER_VERSION,
        payload={
            "config": cfg,
            "latent_scale": float(params.latent_scale),
            "trained": params.trained,
            "state": state_to_numpy(params.module),
        },
    )


def load_denoiser(path) -> DenoiserParams:
    blob = load_checkpoint(path, kind="denoiser", version=DENOISER_VERSION)
    cfg_dict = dict(blob["config"])
    cfg_dict["widths"] = tuple(cfg_dict["widths"])
    config = DenoiserConfig(**cfg_dict)
    module = DualHeadUNet(config)
    load_state_from_numpy(module, blob["state"])
    module.eval()
    return DenoiserParams(
        module=module, config=config, trained=bool(blob["trained"]), latent_scale=float(blob["latent_scale"])
    )
