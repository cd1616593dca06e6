"""Held-out evaluation of albedo predictions: quality against ground truth,
cross-illumination consistency, lighting-latent statistics, and the four-way
ablation comparison."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from itertools import combinations
from pathlib import Path

import numpy as np
import torch

from .analysis import DistributionReport, report_from_latents
from .autoencoder import AutoencoderParams
from .denoiser import DenoiserParams
from .inference import InferenceConfig, predict_albedo_full
from .metrics import psnr, ssim
from .scene import SceneSample
from .schedule import NoiseSchedule, make_schedule
from .training import TrainConfig

ABLATION_NAMES = ("full", "no_blur", "no_consistency", "no_reg")


@dataclass
class SceneEval:
    albedo_psnr: float
    albedo_ssim: float
    baseline_psnr: float
    baseline_ssim: float
    pred_pairwise_psnr: float
    input_pairwise_psnr: float
    latent_pairwise_rms: float


@dataclass
class EvalReport:
    per_scene: list[SceneEval]
    mean_albedo_psnr: float
    mean_albedo_ssim: float
    mean_baseline_psnr: float
    mean_baseline_ssim: float
    mean_pred_pairwise_psnr: float
    mean_input_pairwise_psnr: float
    mean_latent_pairwise_rms: float
    lighting_report: DistributionReport


def _pairwise_mean(values, fn) -> float:
    pairs = list(combinations(range(len(values)), 2))
    return float(np.mean([fn(values[i], values[j]) for i, j in pairs]))


def _latent_rms(a: torch.Tensor, b: torch.Tensor) -> float:
    return float(torch.sqrt(torch.mean((a.double() - b.double()) ** 2)))


def evaluate_model(
    scenes: list[SceneSample],
    config: InferenceConfig,
    ae_params: AutoencoderParams,
    den_params: DenoiserParams,
    sched: NoiseSchedule | None = None,
    *,
    allow_untrained: bool = False,
    progress: bool = False,
) -> EvalReport:
    """Predict an albedo for every illumination of every scene and score it.

    Per-scene values average over that scene's lights (or light pairs); the
    dataset values are arithmetic means of the per-scene values.
    """
    if len(scenes) == 0:
        raise ValueError("no scenes to evaluate")
    for idx, scene in enumerate(scenes):
        if len(scene.images) < 2:
            raise ValueError(f"scene {idx} has {len(scene.images)} lights, need at least 2 for pairwise metrics")
    config.validate()
    if sched is None:
        sched = make_schedule(den_params.config.timesteps)

    iterator = scenes
    if progress:
        from tqdm import tqdm

        iterator = tqdm(scenes, desc="eval", unit="scene")

    per_scene = []
    lighting_latents = []
    for scene in iterator:
        preds = [
            predict_albedo_full(image, config, ae_params, den_params, sched, allow_untrained=allow_untrained)
            for image in scene.images
        ]
        albedos = [p.albedo for p in preds]
        latents = [p.albedo_latent for p in preds]
        lighting_latents.extend(p.lighting_latent.double().numpy() for p in preds)
        per_scene.append(
            SceneEval(
                albedo_psnr=float(np.mean([psnr(a, scene.albedo) for a in albedos])),
                albedo_ssim=float(np.mean([ssim(a, scene.albedo) for a in albedos])),
                baseline_psnr=float(np.mean([psnr(i, scene.albedo) for i in scene.images])),
                baseline_ssim=float(np.mean([ssim(i, scene.albedo) for i in scene.images])),
                pred_pairwise_psnr=_pairwise_mean(albedos, psnr),
                input_pairwise_psnr=_pairwise_mean(scene.images, psnr),
                latent_pairwise_rms=_pairwise_mean(latents, _latent_rms),
            )
        )

    def mean_of(field: str) -> float:
        return float(np.mean([getattr(s, field) for s in per_scene]))

    return EvalReport(
        per_scene=per_scene,
        mean_albedo_psnr=mean_of("albedo_psnr"),
        mean_albedo_ssim=mean_of("albedo_ssim"),
        mean_baseline_psnr=mean_of("baseline_psnr"),
        mean_baseline_ssim=mean_of("baseline_ssim"),
        mean_pred_pairwise_psnr=mean_of("pred_pairwise_psnr"),
        mean_input_pairwise_psnr=mean_of("input_pairwise_psnr"),
        mean_latent_pairwise_rms=mean_of("latent_pairwise_rms"),
        lighting_report=report_from_latents(lighting_latents),
    )


_SCENE_FIELDS = (
    "albedo_psnr",
    "albedo_ssim",
    "baseline_psnr",
    "baseline_ssim",
    "pred_pairwise_psnr",
    "input_pairwise_psnr",
    "latent_pairwise_rms",
)


def write_eval_report(report: EvalReport, out_dir: str | Path) -> None:
    """Emit eval.json with dataset means and eval.csv with per-scene rows."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "mean_albedo_psnr": report.mean_albedo_psnr,
        "mean_albedo_ssim": report.mean_albedo_ssim,
        "mean_baseline_psnr": report.mean_baseline_psnr,
        "mean_baseline_ssim": report.mean_baseline_ssim,
        "mean_pred_pairwise_psnr": report.mean_pred_pairwise_psnr,
        "mean_input_pairwise_psnr": report.mean_input_pairwise_psnr,
        "mean_latent_pairwise_rms": report.mean_latent_pairwise_rms,
        "lighting_positive_fraction": report.lighting_report.positive_fraction,
        "scene_count": len(report.per_scene),
    }
    (out_dir / "eval.json").write_text(json.dumps(payload, indent=2))
    with (out_dir / "eval.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("scene",) + _SCENE_FIELDS)
        for idx, scene in enumerate(report.per_scene):
            writer.writerow([idx] + [f"{getattr(scene, f):.6f}" for f in _SCENE_FIELDS])
        writer.writerow(["mean"] + [f"{getattr(report, 'mean_' + f):.6f}" for f in _SCENE_FIELDS])


def make_ablation_configs(base: TrainConfig) -> dict[str, TrainConfig]:
    """The four training configurations compared in the ablation: the full
    objective, no lighting blur, no cross-pass consistency, no regularizer."""
    return {
        "full": base,
        "no_blur": replace(base, blur_prob=0.0),
        "no_consistency": replace(base, use_consistency=False),
        "no_reg": replace(base, lam=0.0),
    }


@dataclass
class AblationRow:
    name: str
    mean_psnr: float
    mean_ssim: float


def ablation_table(rows: list[AblationRow]) -> str:
    """Fixed-width text table with one row per training configuration."""
    lines = [f"{'config':<16} {'psnr':>8} {'ssim':>8}"]
    for row in rows:
        lines.append(f"{row.name:<16} {row.mean_psnr:>8.2f} {row.mean_ssim:>8.4f}")
    return "\n".join(lines)


def write_ablation_table(rows: list[AblationRow], out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(
        json.dumps([{"name": r.name, "mean_psnr": r.mean_psnr, "mean_ssim": r.mean_ssim} for r in rows], indent=2)
    )
    with (out_dir / "ablation.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "mean_psnr", "mean_ssim"])
        for r in rows:
            writer.writerow([r.name, f"{r.mean_psnr:.6f}", f"{r.mean_ssim:.6f}"])
    (out_dir / "ablation.txt").write_text(ablation_table(rows) + "\n")
