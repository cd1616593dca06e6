"""Command line for the full pipeline: data generation, autoencoder and
denoiser training, inference, evaluation, latent analysis, and ablations.

Every command writes its outputs into a run directory together with
snapshot.json, a resolved-configuration record (seeds included). Re-running
a command with --config pointing at that snapshot reproduces the outputs
bit for bit. Exit codes: 0 success, 2 usage or configuration error, 3 data
or file error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

from .analysis import analyze_lighting_latents, write_distribution_report
from .autoencoder import (
    AutoencoderConfig,
    encode_dataset,
    load_autoencoder,
    save_autoencoder,
    train_autoencoder,
)
from .denoiser import DenoiserConfig
from .evaluation import (
    AblationRow,
    ablation_table,
    evaluate_model,
    make_ablation_configs,
    write_ablation_table,
    write_eval_report,
)
from .inference import InferenceConfig, predict_albedo_full
from .plots import plot_image_grid, plot_loss_curves
from .scene import DatasetFormatError, gen_scene, load_image, read_dataset, save_image, write_dataset
from .training import TrainConfig, load_denoiser, save_denoiser, train_denoiser, write_training_log

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

RUN_ROOT_ENV = "LIGHTSPLIT_RUN_ROOT"
SNAPSHOT_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """A configuration file or flag value violates the schema."""


def _coerce_value(value, default, label: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"field '{label}' must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"field '{label}' must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"field '{label}' must be a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"field '{label}' must be a list, got {value!r}")
        element = default[0]
        return tuple(_coerce_value(v, element, f"{label}[{i}]") for i, v in enumerate(value))
    return value


def _merge_config(base, overrides: dict | None, section: str):
    """Apply override values onto a config dataclass, validating field names
    and types against the dataclass defaults."""
    if not overrides:
        return base
    valid = {f.name for f in dataclasses.fields(base)}
    out = base
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in valid:
            raise ConfigError(f"unknown field '{key}' in section '{section}'")
        default = getattr(type(base)(), key)
        if key == "blur_sigma_range" and len(value) != 2:
            raise ConfigError(f"field '{section}.blur_sigma_range' must have exactly 2 values")
        out = dataclasses.replace(out, **{key: _coerce_value(value, default, f"{section}.{key}")})
    return out


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return data


def _flag_overrides(args, dc_type, prefix: str = "") -> dict:
    out = {}
    for f in dataclasses.fields(dc_type):
        value = getattr(args, prefix + f.name, None)
        if value is not None:
            out[f.name] = value
    return out


def _resolve(args, dc_type, section: str, prefix: str = ""):
    """dataclass defaults, overridden by the config file section, overridden
    by explicit flags."""
    file_config = _load_config_file(getattr(args, "config", None))
    section_data = file_config.get(section, {})
    if not isinstance(section_data, dict):
        raise ConfigError(f"section '{section}' must be a JSON object")
    merged = _merge_config(dc_type(), section_data, section)
    return _merge_config(merged, _flag_overrides(args, dc_type, prefix), section)


def _config_dict(config) -> dict:
    out = {}
    for key, value in dataclasses.asdict(config).items():
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def _out_dir(args, command: str) -> Path:
    if args.out is not None:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(RUN_ROOT_ENV, "runs")) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_snapshot(out: Path, command: str, sections: dict, paths: dict) -> None:
    payload = {"schema_version": SNAPSHOT_SCHEMA_VERSION, "command": command}
    payload.update({k: str(v) for k, v in paths.items()})
    payload.update(sections)
    (out / "snapshot.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def _path_from(args, name: str, required: bool = True) -> str | None:
    """A path flag, falling back to the same key in the config file (so a
    snapshot can be replayed without repeating the path flags)."""
    value = getattr(args, name, None)
    if value is None:
        value = _load_config_file(getattr(args, "config", None)).get(name)
    if value is None and required:
        raise ConfigError(f"missing required path: --{name.replace('_', '-')}")
    return value


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _add_config_flags(parser, dc_type, prefix: str = "") -> None:
    for f in dc_type.__dataclass_fields__.values():
        default = getattr(dc_type(), f.name)
        flag = "--" + (prefix + f.name).replace("_", "-")
        dest = prefix + f.name
        if isinstance(default, bool):
            parser.add_argument(flag, dest=dest, type=_parse_bool, default=None, metavar="{true,false}")
        elif isinstance(default, int):
            parser.add_argument(flag, dest=dest, type=int, default=None)
        elif isinstance(default, float):
            parser.add_argument(flag, dest=dest, type=float, default=None)
        elif isinstance(default, tuple):
            nargs = "+" if f.name == "widths" else len(default)
            parser.add_argument(flag, dest=dest, type=type(default[0]), nargs=nargs, default=None)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def cmd_gen_data(args) -> int:
    if args.scenes < 1:
        raise ConfigError(f"--scenes must be >= 1, got {args.scenes}")
    out = Path(args.out)
    scenes = [gen_scene(args.seed + i, k=args.lights, height=args.size, width=args.size) for i in range(args.scenes)]
    write_dataset(scenes, out, force=args.force)
    _write_snapshot(
        out,
        "gen-data",
        {
            "gen_data": {
                "scenes": args.scenes,
                "lights": args.lights,
                "size": args.size,
                "seed": args.seed,
            }
        },
        {},
    )
    print(f"wrote {args.scenes} scenes x {args.lights} lights at {args.size}x{args.size} to {out}")
    return EXIT_OK


def cmd_train_vae(args) -> int:
    config = _resolve(args, AutoencoderConfig, "autoencoder")
    data = _require_file(_path_from(args, "data"), "dataset directory")
    out = _out_dir(args, "train-vae")
    scenes = read_dataset(data)
    params, history = train_autoencoder(scenes, config, progress=args.progress)
    save_autoencoder(params, out / "vae.ckpt")
    rows = [{"epoch": i + 1, "recon_mse": value} for i, value in enumerate(history)]
    with (out / "recon_history.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "recon_mse"])
        writer.writeheader()
        writer.writerows(rows)
    plot_loss_curves(rows, out / "loss_curve.png", x_key="epoch")
    _write_snapshot(out, "train-vae", {"autoencoder": _config_dict(config)}, {"data": data})
    print(f"trained autoencoder for {config.epochs} epochs, final recon mse {history[-1]:.6f}")
    print(f"checkpoint: {out / 'vae.ckpt'}")
    return EXIT_OK


def _resolve_denoiser(args, ae_config) -> DenoiserConfig:
    den = _resolve(args, DenoiserConfig, "denoiser")
    explicit = _flag_overrides(args, DenoiserConfig)
    file_section = _load_config_file(getattr(args, "config", None)).get("denoiser", {})
    if "latent_channels" not in explicit and "latent_channels" not in file_section:
        den = dataclasses.replace(den, latent_channels=ae_config.latent_channels)
    if den.latent_channels != ae_config.latent_channels:
        raise ConfigError(
            f"denoiser.latent_channels={den.latent_channels} does not match "
            f"autoencoder latent_channels={ae_config.latent_channels}"
        )
    return den


def cmd_train(args) -> int:
    train_config = _resolve(args, TrainConfig, "train")
    data = _require_file(_path_from(args, "data"), "dataset directory")
    vae = _require_file(_path_from(args, "vae"), "autoencoder checkpoint")
    out = _out_dir(args, "train")
    ae_params = load_autoencoder(vae)
    den_config = _resolve_denoiser(args, ae_params.config)
    scenes = read_dataset(data)
    latents = encode_dataset(scenes, ae_params)
    params, rows = train_denoiser(latents, den_config, train_config, progress=args.progress)
    save_denoiser(params, out / "model.ckpt")
    write_training_log(rows, out / "train_log.csv")
    plot_loss_curves(rows, out / "loss_curve.png")
    _write_snapshot(
        out,
        "train",
        {"train": _config_dict(train_config), "denoiser": _config_dict(den_config)},
        {"data": data, "vae": vae},
    )
    print(f"trained denoiser for {train_config.steps} steps, final total loss {rows[-1]['total']:.6f}")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    config = _resolve(args, InferenceConfig, "inference")
    image_path = _require_file(_path_from(args, "image"), "input image")
    vae = _require_file(_path_from(args, "vae"), "autoencoder checkpoint")
    model = _require_file(_path_from(args, "model"), "denoiser checkpoint")
    out = _out_dir(args, "infer")
    ae_params = load_autoencoder(vae)
    den_params = load_denoiser(model)
    image = load_image(image_path)
    pred = predict_albedo_full(image, config, ae_params, den_params)
    save_image(pred.albedo, out / "albedo.png")
    plot_image_grid([[image, pred.albedo]], out / "decomposition.png", col_labels=["input", "albedo"])
    _write_snapshot(
        out,
        "infer",
        {"inference": _config_dict(config)},
        {"image": image_path, "vae": vae, "model": model},
    )
    print(f"albedo written to {out / 'albedo.png'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _resolve(args, InferenceConfig, "inference")
    data = _require_file(_path_from(args, "data"), "dataset directory")
    vae = _require_file(_path_from(args, "vae"), "autoencoder checkpoint")
    model = _require_file(_path_from(args, "model"), "denoiser checkpoint")
    out = _out_dir(args, "eval")
    ae_params = load_autoencoder(vae)
    den_params = load_denoiser(model)
    scenes = read_dataset(data)
    report = evaluate_model(scenes, config, ae_params, den_params, progress=args.progress)
    write_eval_report(report, out)
    write_distribution_report(report.lighting_report, out)
    grid_rows, labels = [], []
    for idx, scene in enumerate(scenes[: min(4, len(scenes))]):
        pred = predict_albedo_full(scene.images[0], config, ae_params, den_params)
        grid_rows.append([scene.images[0], pred.albedo, scene.albedo])
        labels.append(f"scene {idx}")
    plot_image_grid(
        grid_rows, out / "albedo_grid.png", row_labels=labels, col_labels=["input", "predicted", "truth"]
    )
    _write_snapshot(out, "eval", {"inference": _config_dict(config)}, {"data": data, "vae": vae, "model": model})
    print(
        f"albedo psnr {report.mean_albedo_psnr:.2f} dB (baseline {report.mean_baseline_psnr:.2f} dB), "
        f"ssim {report.mean_albedo_ssim:.4f}, over {len(report.per_scene)} scenes"
    )
    print(f"reports in {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    data = _require_file(_path_from(args, "data"), "dataset directory")
    vae = _require_file(_path_from(args, "vae"), "autoencoder checkpoint")
    out = _out_dir(args, "analyze")
    ae_params = load_autoencoder(vae)
    scenes = read_dataset(data)
    report = analyze_lighting_latents(scenes, ae_params)
    write_distribution_report(report, out)
    _write_snapshot(out, "analyze", {}, {"data": data, "vae": vae})
    print(
        f"lighting latent mean {report.mean:.4f}, std {report.std:.4f}, "
        f"positive fraction {report.positive_fraction:.4f}"
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    train_config = _resolve(args, TrainConfig, "train")
    inf_config = _resolve(args, InferenceConfig, "inference", prefix="inference_")
    data = _require_file(_path_from(args, "data"), "dataset directory")
    vae = _require_file(_path_from(args, "vae"), "autoencoder checkpoint")
    eval_data = _path_from(args, "eval_data", required=False) or data
    eval_data = _require_file(eval_data, "evaluation dataset directory")
    out = _out_dir(args, "ablate")
    ae_params = load_autoencoder(vae)
    den_config = _resolve_denoiser(args, ae_params.config)
    train_latents = encode_dataset(read_dataset(data), ae_params)
    eval_scenes = read_dataset(eval_data)

    rows = []
    for name, config in make_ablation_configs(train_config).items():
        params, log_rows = train_denoiser(train_latents, den_config, config, progress=args.progress)
        sub = out / name
        sub.mkdir(parents=True, exist_ok=True)
        save_denoiser(params, sub / "model.ckpt")
        write_training_log(log_rows, sub / "train_log.csv")
        report = evaluate_model(eval_scenes, inf_config, ae_params, params, progress=args.progress)
        write_eval_report(report, sub)
        write_distribution_report(report.lighting_report, sub)
        rows.append(AblationRow(name=name, mean_psnr=report.mean_albedo_psnr, mean_ssim=report.mean_albedo_ssim))
    write_ablation_table(rows, out)
    _write_snapshot(
        out,
        "ablate",
        {
            "train": _config_dict(train_config),
            "denoiser": _config_dict(den_config),
            "inference": _config_dict(inf_config),
        },
        {"data": data, "vae": vae, "eval_data": eval_data},
    )
    print(ablation_table(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lightsplit",
        description="Train and evaluate a relighting-supervised albedo extraction pipeline on procedural scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a procedural multi-illumination dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--lights", type=int, default=5)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true", help="overwrite an existing non-empty directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-vae", help="train the image autoencoder")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--config", help="JSON config file (sections: autoencoder)")
    p.add_argument("--progress", action="store_true")
    _add_config_flags(p, AutoencoderConfig)
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("train", help="train the decomposition denoiser")
    p.add_argument("--data")
    p.add_argument("--vae")
    p.add_argument("--out")
    p.add_argument("--config", help="JSON config file (sections: train, denoiser)")
    p.add_argument("--progress", action="store_true")
    _add_config_flags(p, TrainConfig)
    _add_config_flags(p, DenoiserConfig)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict the albedo of one image")
    p.add_argument("--image")
    p.add_argument("--vae")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--config", help="JSON config file (sections: inference)")
    _add_config_flags(p, InferenceConfig)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a trained model on a dataset")
    p.add_argument("--data")
    p.add_argument("--vae")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--config", help="JSON config file (sections: inference)")
    p.add_argument("--progress", action="store_true")
    _add_config_flags(p, InferenceConfig)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="study lighting latents isolated with ground-truth albedo")
    p.add_argument("--data")
    p.add_argument("--vae")
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="train and evaluate the four objective variants")
    p.add_argument("--data")
    p.add_argument("--vae")
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--out")
    p.add_argument("--config", help="JSON config file (sections: train, denoiser, inference)")
    p.add_argument("--progress", action="store_true")
    _add_config_flags(p, TrainConfig)
    _add_config_flags(p, DenoiserConfig)
    _add_config_flags(p, InferenceConfig, prefix="inference_")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except DatasetFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
