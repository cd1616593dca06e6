"""Distribution study of lighting latents isolated with ground-truth albedo.

For each scene the albedo latent is subtracted from every image latent,
leaving the lighting component. The report characterizes how those entries
are distributed, in particular what fraction is strictly positive.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderParams, encode
from .scene import SceneSample

HISTOGRAM_BINS = 64


@dataclass
class StreamingMoments:
    """Single-pass count, mean, variance and positive-count accumulator."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    n_positive: int = 0

    def update(self, values: np.ndarray) -> None:
        chunk = np.asarray(values, dtype=np.float64).ravel()
        if chunk.size == 0:
            return
        n_b = chunk.size
        mean_b = float(chunk.mean())
        m2_b = float(((chunk - mean_b) ** 2).sum())
        n_a = self.count
        total = n_a + n_b
        delta = mean_b - self.mean
        self.mean += delta * n_b / total
        self.m2 += m2_b + delta * delta * n_a * n_b / total
        self.count = total
        self.n_positive += int((chunk > 0.0).sum())

    @property
    def variance(self) -> float:
        if self.count == 0:
            raise ValueError("no values accumulated")
        return self.m2 / self.count

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def positive_fraction(self) -> float:
        if self.count == 0:
            raise ValueError("no values accumulated")
        return self.n_positive / self.count


@dataclass
class ChannelStats:
    mean: float
    std: float
    positive_fraction: float


@dataclass
class DistributionReport:
    count: int
    mean: float
    std: float
    positive_fraction: float
    bin_edges: np.ndarray
    bin_counts: np.ndarray
    per_channel: list[ChannelStats] = field(default_factory=list)


def report_from_latents(latents: list[np.ndarray]) -> DistributionReport:
    """Build a DistributionReport from raw lighting-latent arrays.

    Each array must have shape (..., C) with a common channel count. This
    path bypasses the encoder so expected statistics can be computed exactly.
    """
    if len(latents) == 0:
        raise ValueError("no latents to analyze")
    arrays = [np.asarray(z, dtype=np.float64) for z in latents]
    channels = arrays[0].shape[-1]
    for i, z in enumerate(arrays):
        if z.ndim < 1 or z.shape[-1] != channels:
            raise ValueError(f"latent {i} has channel count {z.shape[-1] if z.ndim else 0}, expected {channels}")
    overall = StreamingMoments()
    per_channel = [StreamingMoments() for _ in range(channels)]
    for z in arrays:
        overall.update(z)
        flat = z.reshape(-1, channels)
        for ch in range(channels):
            per_channel[ch].update(flat[:, ch])
    all_values = np.concatenate([z.ravel() for z in arrays])
    counts, edges = np.histogram(all_values, bins=HISTOGRAM_BINS)
    return DistributionReport(
        count=overall.count,
        mean=overall.mean,
        std=overall.std,
        positive_fraction=overall.positive_fraction,
        bin_edges=edges,
        bin_counts=counts.astype(np.int64),
        per_channel=[
            ChannelStats(mean=m.mean, std=m.std, positive_fraction=m.positive_fraction) for m in per_channel
        ],
    )


def analyze_lighting_latents(dataset: list[SceneSample], ae_params: AutoencoderParams) -> DistributionReport:
    """Encode every scene, subtract the ground-truth albedo latent from each
    image latent, and report distribution statistics of the residuals."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    residuals = []
    for scene in dataset:
        z_albedo = encode(scene.albedo, ae_params).numpy().astype(np.float64)
        for image in scene.images:
            z_image = encode(image, ae_params).numpy().astype(np.float64)
            residuals.append(z_image - z_albedo)
    return report_from_latents(residuals)


def write_distribution_report(report: DistributionReport, out_dir: str | Path, name: str = "lighting_latents") -> None:
    """Emit <name>.json with the full statistics and <name>.png with the
    histogram. Output bytes depend only on the report contents."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "count": report.count,
        "mean": report.mean,
        "std": report.std,
        "positive_fraction": report.positive_fraction,
        "bin_edges": [float(e) for e in report.bin_edges],
        "bin_counts": [int(c) for c in report.bin_counts],
        "per_channel": [
            {"mean": c.mean, "std": c.std, "positive_fraction": c.positive_fraction} for c in report.per_channel
        ],
    }
    (out_dir / f"{name}.json").write_text(json.dumps(payload, indent=2))

    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    widths = np.diff(report.bin_edges)
    ax.bar(report.bin_edges[:-1], report.bin_counts, width=widths, align="edge", color="#4878cf")
    ax.axvline(0.0, color="black", linewidth=1)
    ax.set_xlabel("lighting latent value")
    ax.set_ylabel("count")
    ax.set_title(f"positive fraction {report.positive_fraction:.3f}")
    fig.tight_layout()
    fig.savefig(out_dir / f"{name}.png", metadata={"Software": "lightsplit"})
    plt.close(fig)
