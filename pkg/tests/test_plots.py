"""Tests for figure rendering."""

import numpy as np
import pytest

from lightsplit.plots import plot_image_grid, plot_loss_curves


class TestLossCurves:
    def test_png_written_and_deterministic(self, tmp_path):
        rows = [
            {"step": 1, "total": 1.0, "L_relight": 0.5},
            {"step": 2, "total": 0.8, "L_relight": 0.4},
        ]
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        plot_loss_curves(rows, a)
        plot_loss_curves(rows, b)
        assert a.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        assert a.read_bytes() == b.read_bytes()

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="no log rows"):
            plot_loss_curves([], tmp_path / "x.png")


class TestImageGrid:
    def test_ragged_grid_written(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = [[rng.uniform(size=(8, 8, 3)) for _ in range(3)], [rng.uniform(size=(8, 8, 3))]]
        out = tmp_path / "grid.png"
        plot_image_grid(rows, out, row_labels=["a", "b"], col_labels=["x", "y", "z"])
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="at least one image"):
            plot_image_grid([], tmp_path / "x.png")
        with pytest.raises(ValueError, match="at least one image"):
            plot_image_grid([[]], tmp_path / "x.png")
