"""Small convolutional VAE that maps images to compact latents.

Trained once on scene images, then frozen; every later stage treats the
encoder and decoder as fixed. Encoding is deterministic (posterior mean).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .checkpoint import load_checkpoint, load_state_from_numpy, save_checkpoint, state_to_numpy
from .scene import SceneSample

logger = logging.getLogger(__name__)

AE_CHECKPOINT_VERSION = 1


@dataclass
class AutoencoderConfig:
    downsample_factor: int = 4  # power of two
    latent_channels: int = 4
    base_width: int = 32
    kl_weight: float = 1e-6
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 40
    seed: int = 0


@dataclass
class AutoencoderParams:
    module: "ConvVAE"
    config: AutoencoderConfig
    frozen: bool = False
    version: int = AE_CHECKPOINT_VERSION


class ConvVAE(nn.Module):
    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        f, c, w = config.downsample_factor, config.latent_channels, config.base_width
        if f < 2 or (f & (f - 1)) != 0:
            raise ValueError(f"downsample_factor must be a power of two >= 2, got {f}")
        stages = int(math.log2(f))
        enc: list[nn.Module] = [nn.Conv2d(3, w, 3, padding=1), nn.SiLU()]
        ch = w
        for _ in range(stages):
            nxt = min(2 * ch, 4 * w)
            enc += [nn.Conv2d(ch, nxt, 3, stride=2, padding=1), nn.SiLU(), nn.Conv2d(nxt, nxt, 3, padding=1), nn.SiLU()]
            ch = nxt
        enc += [nn.Conv2d(ch, 2 * c, 3, padding=1)]
        self.encoder = nn.Sequential(*enc)

        dec: list[nn.Module] = [nn.Conv2d(c, ch, 3, padding=1), nn.SiLU(), nn.Conv2d(ch, ch, 3, padding=1), nn.SiLU()]
        for _ in range(stages):
            nxt = max(ch // 2, w)
            dec += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(ch, nxt, 3, padding=1), nn.SiLU()]
            ch = nxt
        dec += [nn.Conv2d(ch, ch, 3, padding=1), nn.SiLU(), nn.Conv2d(ch, 3, 3, padding=1)]
        self.decoder = nn.Sequential(*dec)

    def encode_params(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mu, logvar = self.encoder(x).chunk(2, dim=1)
        return mu, torch.clamp(logvar, -30.0, 20.0)

    def decode_logits(self, z: torch.Tensor) -> torch.Tensor:
        return self.decoder(z)

    def forward(self, x: torch.Tensor, noise: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        mu, logvar = self.encode_params(x)
        z = mu + torch.exp(0.5 * logvar) * noise
        return torch.sigmoid(self.decode_logits(z)), mu, logvar


def _check_image(image: np.ndarray, f: int) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must have shape (H, W, 3), got {image.shape}")
    h, w = image.shape[:2]
    if h % f or w % f:
        raise ValueError(f"image size {h}x{w} not divisible by downsample factor {f}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")


def encode(image: np.ndarray, params: AutoencoderParams) -> torch.Tensor:
    """Deterministic posterior-mean latent of one image, shape (h, w, c) float32."""
    if not params.frozen:
        logger.warning("encoding with an unfrozen autoencoder; results may shift under further training")
    image = np.asarray(image)
    _check_image(image, params.config.downsample_factor)
    x = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float()[None]
    params.module.eval()
    with torch.no_grad():
        mu, _ = params.module.encode_params(x)
    return mu[0].permute(1, 2, 0).contiguous()


def decode(latent: torch.Tensor, params: AutoencoderParams) -> np.ndarray:
    """Decode a (h, w, c) latent to an (H, W, 3) image in [0, 1]."""
    c = params.config.latent_channels
    if latent.ndim != 3 or latent.shape[2] != c:
        raise ValueError(f"latent must have shape (h, w, {c}), got {tuple(latent.shape)}")
    z = latent.permute(2, 0, 1)[None].float()
    params.module.eval()
    with torch.no_grad():
        out = torch.sigmoid(params.module.decode_logits(z))
    return out[0].permute(1, 2, 0).numpy().astype(np.float64)


def _image_stack(scenes: list[SceneSample]) -> torch.Tensor:
    imgs = []
    for scene in scenes:
        imgs.append(scene.albedo)
        imgs.extend(scene.images)
    arr = np.stack([im.transpose(2, 0, 1) for im in imgs]).astype(np.float32)
    return torch.from_numpy(arr)


def train_autoencoder(
    scenes: list[SceneSample], config: AutoencoderConfig, progress: bool = False
) -> tuple[AutoencoderParams, list[float]]:
    """Train on all scene images plus albedos. Returns frozen params and the
    per-epoch mean reconstruction loss history."""
    if not scenes:
        raise ValueError("need at least one scene to train on")
    data = _image_stack(scenes)
    _check_image(data[0].permute(1, 2, 0).numpy(), config.downsample_factor)
    gen = torch.Generator().manual_seed(config.seed)
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        module = ConvVAE(config)
    opt = torch.optim.Adam(module.parameters(), lr=config.learning_rate)
    n = data.shape[0]
    bs = min(config.batch_size, n)
    history: list[float] = []
    module.train()
    epochs_iter = range(config.epochs)
    if progress:
        from tqdm import tqdm

        epochs_iter = tqdm(epochs_iter, desc="autoencoder", unit="epoch")
    for _ in epochs_iter:
        order = torch.randperm(n, generator=gen)
        recon_sum, count = 0.0, 0
        for start in range(0, n, bs):
            batch = data[order[start : start + bs]]
            noise = torch.randn(batch.shape[0], config.latent_channels, batch.shape[2] // config.downsample_factor,
                                batch.shape[3] // config.downsample_factor, generator=gen)
            recon, mu, logvar = module(batch, noise)
            recon_loss = ((recon - batch) ** 2).mean()
            kl = -0.5 * (1.0 + logvar - mu**2 - torch.exp(logvar)).mean()
            loss = recon_loss + config.kl_weight * kl
            opt.zero_grad()
            loss.backward()
            opt.step()
            recon_sum += recon_loss.detach().item() * batch.shape[0]
            count += batch.shape[0]
        history.append(recon_sum / count)
    module.eval()
    module.requires_grad_(False)
    return AutoencoderParams(module=module, config=config, frozen=True), history


def encode_dataset(scenes: list[SceneSample], params: AutoencoderParams) -> list[list[torch.Tensor]]:
    """Image latents for every scene and illumination, as nested lists."""
    return [[encode(image, params) for image in scene.images] for scene in scenes]


def save_autoencoder(params: AutoencoderParams, path) -> None:
    save_checkpoint(
        path,
        kind="autoencoder",
        version=AE_CHECKPOINT_VERSION,
        payload={"config": asdict(params.config), "frozen": params.frozen, "state": state_to_numpy(params.module)},
    )


def load_autoencoder(path) -> AutoencoderParams:
    blob = load_checkpoint(path, kind="autoencoder", version=AE_CHECKPOINT_VERSION)
    config = AutoencoderConfig(**blob["config"])
    module = ConvVAE(config)
    load_state_from_numpy(module, blob["state"])
    module.eval()
    module.requires_grad_(False)
    return AutoencoderParams(module=module, config=config, frozen=bool(blob["frozen"]))
