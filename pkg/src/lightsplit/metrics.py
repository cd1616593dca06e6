"""Image quality metrics and relative-reflectance judgment scoring."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
WHDR_DELTA = 0.10
LUMINANCE_FLOOR = 1e-6


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio for unit-range images, capped at 99 dB."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x**2) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window, averaged over
    channels and valid window positions."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"expected (H, W, C) images, got shape {a.shape}")
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")
    kernel = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    values = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu_x = _windowed_mean(x, kernel)
        mu_y = _windowed_mean(y, kernel)
        var_x = _windowed_mean(x * x, kernel) - mu_x**2
        var_y = _windowed_mean(y * y, kernel) - mu_y**2
        cov = _windowed_mean(x * y, kernel) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
        values.append(float(np.mean(num / den)))
    return float(np.mean(values))


@dataclass
class ConsistencyReport:
    per_scene_psnr: list[float]
    per_scene_ssim: list[float]
    mean_psnr: float
    mean_ssim: float


def consistency_eval(predictions: list[list[np.ndarray]], gts: list[np.ndarray]) -> ConsistencyReport:
    """Score per-scene prediction lists against ground truths.

    Each scene's value is the mean metric over its predictions; the dataset
    value is the arithmetic mean of the per-scene values.
    """
    if len(predictions) == 0 or len(predictions) != len(gts):
        raise ValueError(f"got {len(predictions)} prediction lists for {len(gts)} ground truths")
    per_psnr, per_ssim = [], []
    for idx, (preds, gt) in enumerate(zip(predictions, gts)):
        if len(preds) == 0:
            raise ValueError(f"scene {idx} has no predictions")
        per_psnr.append(float(np.mean([psnr(p, gt) for p in preds])))
        per_ssim.append(float(np.mean([ssim(p, gt) for p in preds])))
    return ConsistencyReport(
        per_scene_psnr=per_psnr,
        per_scene_ssim=per_ssim,
        mean_psnr=float(np.mean(per_psnr)),
        mean_ssim=float(np.mean(per_ssim)),
    )


def write_consistency_report(report: ConsistencyReport, out_dir: str | Path) -> None:
    """Emit report.json plus report.csv with per-scene rows and a mean row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(
            {
                "per_scene_psnr": report.per_scene_psnr,
                "per_scene_ssim": report.per_scene_ssim,
                "mean_psnr": report.mean_psnr,
                "mean_ssim": report.mean_ssim,
            },
            indent=2,
        )
    )
    with (out_dir / "report.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene", "psnr", "ssim"])
        for idx, (p, s) in enumerate(zip(report.per_scene_psnr, report.per_scene_ssim)):
            writer.writerow([idx, f"{p:.6f}", f"{s:.6f}"])
        writer.writerow(["mean", f"{report.mean_psnr:.6f}", f"{report.mean_ssim:.6f}"])


@dataclass
class Judgment:
    """Relative reflectance judgment between two pixels.

    darker is '1' if point1 has the darker reflectance, '2' if point2 does,
    'E' if they are equal within the ratio threshold. Points are (x, y).
    """

    point1: tuple[int, int]
    point2: tuple[int, int]
    darker: str
    weight: float = 1.0


def _luminance(albedo: np.ndarray, point: tuple[int, int]) -> float:
    x, y = point
    h, w = albedo.shape[:2]
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"point ({x}, {y}) outside {w}x{h} image")
    return max(float(np.mean(albedo[y, x])), LUMINANCE_FLOOR)


def _relative_label(l1: float, l2: float, delta: float) -> str:
    if l2 / l1 > 1.0 + delta:
        return "1"
    if l1 / l2 > 1.0 + delta:
        return "2"
    return "E"


def whdr(albedo: np.ndarray, judgments: list[Judgment], delta: float = WHDR_DELTA) -> float:
    """Weighted human disagreement rate of an albedo against judgments."""
    albedo = np.asarray(albedo, dtype=np.float64)
    if albedo.ndim != 3 or albedo.shape[2] != 3:
        raise ValueError(f"albedo must have shape (H, W, 3), got {albedo.shape}")
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    total_weight = 0.0
    wrong_weight = 0.0
    for j in judgments:
        if j.darker not in ("1", "2", "E"):
            raise ValueError(f"invalid darker label {j.darker!r}")
        if j.weight < 0:
            raise ValueError(f"negative weight {j.weight}")
        predicted = _relative_label(_luminance(albedo, j.point1), _luminance(albedo, j.point2), delta)
        total_weight += j.weight
        if predicted != j.darker:
            wrong_weight += j.weight
    if total_weight == 0.0:
        raise ValueError("judgment set has zero total weight")
    return wrong_weight / total_weight


def synth_judgments(gt_albedo: np.ndarray, n: int, delta: float = WHDR_DELTA, seed: int = 0) -> list[Judgment]:
    """Random point pairs labeled from the ground-truth albedo by the same
    ratio rule the scorer applies, so whdr(gt, judgments) is exactly zero."""
    gt_albedo = np.asarray(gt_albedo, dtype=np.float64)
    if gt_albedo.ndim != 3 or gt_albedo.shape[2] != 3:
        raise ValueError(f"albedo must have shape (H, W, 3), got {gt_albedo.shape}")
    if n < 1:
        raise ValueError(f"need at least one judgment, got {n}")
    h, w = gt_albedo.shape[:2]
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        p1 = (int(rng.integers(0, w)), int(rng.integers(0, h)))
        p2 = (int(rng.integers(0, w)), int(rng.integers(0, h)))
        label = _relative_label(_luminance(gt_albedo, p1), _luminance(gt_albedo, p2), delta)
        out.append(Judgment(point1=p1, point2=p2, darker=label, weight=1.0))
    return out


def save_judgments(judgments: list[Judgment], path: str | Path) -> None:
    rows = [
        {"p1": list(j.point1), "p2": list(j.point2), "darker": j.darker, "weight": j.weight} for j in judgments
    ]
    Path(path).write_text(json.dumps(rows, indent=2))


def load_judgments(path: str | Path) -> list[Judgment]:
    path = Path(path)
    try:
        rows = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed judgment file {path}: {exc}") from exc
    if not isinstance(rows, list):
        raise ValueError(f"judgment file {path} must hold a list")
    out = []
    for i, row in enumerate(rows):
        try:
            out.append(
                Judgment(
                    point1=(int(row["p1"][0]), int(row["p1"][1])),
                    point2=(int(row["p2"][0]), int(row["p2"][1])),
                    darker=str(row["darker"]),
                    weight=float(row.get("weight", 1.0)),
                )
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ValueError(f"judgment {i} in {path} is malformed: {exc}") from exc
    return out
