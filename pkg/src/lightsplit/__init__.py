"""Self-supervised albedo extraction from multi-illumination scenes.

A small conditional latent diffusion model is trained to relight procedural
scenes; its two output heads split each latent into a lighting-invariant
content part and a lighting residual. The content head, decoded, is the
albedo prediction.
"""

from .analysis import (
    ChannelStats,
    DistributionReport,
    StreamingMoments,
    analyze_lighting_latents,
    report_from_latents,
    write_distribution_report,
)
from .autoencoder import (
    AutoencoderConfig,
    AutoencoderParams,
    encode,
    decode,
    encode_dataset,
    load_autoencoder,
    save_autoencoder,
    train_autoencoder,
)
from .denoiser import (
    DenoiserConfig,
    DenoiserParams,
    LatentDecomposition,
    denoise_decompose,
    init_denoiser,
)
from .evaluation import (
    AblationRow,
    EvalReport,
    SceneEval,
    ablation_table,
    evaluate_model,
    make_ablation_configs,
    write_ablation_table,
    write_eval_report,
)
from .inference import (
    AlbedoPrediction,
    InferenceConfig,
    apply_guidance,
    ddim_step,
    guided_decompose,
    predict_albedo,
    predict_albedo_full,
    sample_albedo_latent,
    timestep_sequence,
)
from .losses import (
    LossTerms,
    blur_lighting,
    loss_albedo,
    loss_consistency,
    loss_invariant,
    loss_reg,
    loss_relight,
    total_loss,
)
from .metrics import (
    ConsistencyReport,
    Judgment,
    consistency_eval,
    load_judgments,
    psnr,
    save_judgments,
    ssim,
    synth_judgments,
    whdr,
    write_consistency_report,
)
from .scene import (
    DatasetFormatError,
    SceneSample,
    compose_image,
    gen_albedo,
    gen_scene,
    gen_shading,
    load_image,
    read_dataset,
    save_image,
    write_dataset,
)
from .schedule import NoiseSchedule, add_noise, make_schedule
from .training import (
    TrainConfig,
    TrainState,
    load_denoiser,
    save_denoiser,
    train_denoiser,
    train_step,
    write_training_log,
)

__all__ = [
    "AblationRow",
    "AlbedoPrediction",
    "AutoencoderConfig",
    "AutoencoderParams",
    "ChannelStats",
    "ConsistencyReport",
    "DatasetFormatError",
    "DenoiserConfig",
    "DenoiserParams",
    "DistributionReport",
    "EvalReport",
    "InferenceConfig",
    "Judgment",
    "LatentDecomposition",
    "LossTerms",
    "NoiseSchedule",
    "SceneEval",
    "SceneSample",
    "StreamingMoments",
    "TrainConfig",
    "TrainState",
    "ablation_table",
    "add_noise",
    "analyze_lighting_latents",
    "apply_guidance",
    "blur_lighting",
    "compose_image",
    "consistency_eval",
    "ddim_step",
    "decode",
    "denoise_decompose",
    "encode",
    "encode_dataset",
    "evaluate_model",
    "gen_albedo",
    "gen_scene",
    "gen_shading",
    "guided_decompose",
    "init_denoiser",
    "load_autoencoder",
    "load_denoiser",
    "load_image",
    "load_judgments",
    "loss_albedo",
    "loss_consistency",
    "loss_invariant",
    "loss_reg",
    "loss_relight",
    "make_ablation_configs",
    "make_schedule",
    "predict_albedo",
    "predict_albedo_full",
    "psnr",
    "read_dataset",
    "report_from_latents",
    "sample_albedo_latent",
    "save_autoencoder",
    "save_denoiser",
    "save_image",
    "save_judgments",
    "ssim",
    "synth_judgments",
    "timestep_sequence",
    "total_loss",
    "train_autoencoder",
    "train_denoiser",
    "train_step",
    "whdr",
    "write_ablation_table",
    "write_consistency_report",
    "write_dataset",
    "write_distribution_report",
    "write_eval_report",
    "write_training_log",
]
