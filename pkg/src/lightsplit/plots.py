"""Matplotlib figures for run directories: loss curves and image grids.

Output bytes depend only on the data passed in, so re-running a command
reproduces the PNG files exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_PNG_METADATA = {"Software": "lightsplit"}


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def plot_loss_curves(rows: list[dict], out_png: str | Path, x_key: str = "step") -> None:
    """Line plot of every numeric column in the training log against steps."""
    if len(rows) == 0:
        raise ValueError("no log rows to plot")
    plt = _plt()
    steps = [row[x_key] for row in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key in rows[0]:
        if key == x_key:
            continue
        ax.plot(steps, [row[key] for row in rows], label=key, linewidth=1.2)
    ax.set_xlabel(x_key)
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, metadata=_PNG_METADATA)
    plt.close(fig)


def plot_image_grid(
    rows: list[list[np.ndarray]],
    out_png: str | Path,
    row_labels: list[str] | None = None,
    col_labels: list[str] | None = None,
) -> None:
    """Grid of [0, 1] RGB images, one subplot row per list entry."""
    if len(rows) == 0 or any(len(r) == 0 for r in rows):
        raise ValueError("image grid must have at least one image per row")
    n_cols = max(len(r) for r in rows)
    plt = _plt()
    fig, axes = plt.subplots(
        len(rows), n_cols, figsize=(1.6 * n_cols, 1.6 * len(rows)), squeeze=False
    )
    for i, row in enumerate(rows):
        for j in range(n_cols):
            ax = axes[i][j]
            ax.set_xticks([])
            ax.set_yticks([])
            if j < len(row):
                ax.imshow(np.clip(row[j], 0.0, 1.0), interpolation="nearest")
            else:
                ax.axis("off")
            if i == 0 and col_labels is not None and j < len(col_labels):
                ax.set_title(col_labels[j], fontsize=8)
            if j == 0 and row_labels is not None and i < len(row_labels):
                ax.set_ylabel(row_labels[i], fontsize=8)
    fig.tight_layout()
    fig.savefig(out_png, metadata=_PNG_METADATA)
    plt.close(fig)
