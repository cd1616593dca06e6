"""Procedural multi-illumination scene generation.

Each scene is a piecewise-constant albedo image observed under several
smooth shading fields. Image = clamp(albedo * shading, 0, 1), so the
albedo is recoverable in principle but no single image shows it directly.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

DATASET_FORMAT_VERSION = 1

MIN_SIDE = 8
TEXTURE_NOISE_AMP = 0.02  # stays within the 0.05 budget after clipping
ALBEDO_LO, ALBEDO_HI = 0.05, 0.95
SHADING_LO, SHADING_HI = 0.2, 1.5
MAX_ADJACENT_DELTA = 0.04  # target bound, slightly inside the 0.05 contract


class DatasetFormatError(ValueError):
    """Raised when a dataset directory does not match the expected layout."""

    def __init__(self, message: str, path: Path | str | None = None):
        super().__init__(message)
        self.path = Path(path) if path is not None else None


@dataclass
class SceneSample:
    """One scene: ground-truth albedo plus k renderings under distinct lights."""

    albedo: np.ndarray  # (H, W, 3), values in [0, 1]
    images: list[np.ndarray]  # k arrays of shape (H, W, 3), values in [0, 1]
    light_seeds: list[int]


def _check_size(height: int, width: int) -> None:
    if height < MIN_SIDE or width < MIN_SIDE:
        raise ValueError(f"image size must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}")


def _ellipse_mask(h: int, w: int) -> np.ndarray:
    ry, rx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    mask = ((yy - ry) / max(ry, 0.5)) ** 2 + ((xx - rx) / max(rx, 0.5)) ** 2 <= 1.0
    if not mask.any():
        mask[:] = True
    return mask


def _place_shapes(rng: np.random.Generator, height: int, width: int, n_shapes: int) -> np.ndarray:
    """Paint n_shapes non-overlapping rectangles/ellipses into a label map.

    Shapes keep a one-pixel gap from each other and from the border, so the
    background stays a single connected region and the component count of the
    returned map is exactly n_shapes + 1.
    """
    labels = np.zeros((height, width), dtype=np.int32)
    boxes: list[tuple[int, int, int, int]] = []
    m = min(height, width)
    size_lo, size_hi = max(2, int(0.12 * m)), max(3, int(0.35 * m))

    def fits(r0: int, c0: int, sh: int, sw: int) -> bool:
        for (br, bc, bh, bw) in boxes:
            if r0 < br + bh + 1 and br < r0 + sh + 1 and c0 < bc + bw + 1 and bc < c0 + sw + 1:
                return False
        return True

    placed = 0
    attempts = 0
    lo, hi = size_lo, size_hi
    while placed < n_shapes and attempts < 500:
        attempts += 1
        sh = int(rng.integers(lo, hi + 1))
        sw = int(rng.integers(lo, hi + 1))
        if sh > height - 2 or sw > width - 2:
            continue
        r0 = int(rng.integers(1, height - 1 - sh + 1))
        c0 = int(rng.integers(1, width - 1 - sw + 1))
        if not fits(r0, c0, sh, sw):
            if attempts % 60 == 0 and lo > 2:
                lo, hi = max(2, lo // 2), max(3, hi // 2)
            continue
        placed += 1
        boxes.append((r0, c0, sh, sw))
        if rng.random() < 0.5:
            labels[r0:r0 + sh, c0:c0 + sw] = placed
        else:
            mask = _ellipse_mask(sh, sw)
            labels[r0:r0 + sh, c0:c0 + sw][mask] = placed
    if placed < n_shapes:
        # deterministic raster fallback with the smallest shape size
        sh = sw = 2
        for r0 in range(1, height - 1 - sh + 1):
            for c0 in range(1, width - 1 - sw + 1):
                if placed >= n_shapes:
                    break
                if fits(r0, c0, sh, sw):
                    placed += 1
                    boxes.append((r0, c0, sh, sw))
                    labels[r0:r0 + sh, c0:c0 + sw] = placed
            if placed >= n_shapes:
                break
    return labels


def gen_albedo_with_labels(seed: int, height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Like gen_albedo but also returns the pre-noise region label map."""
    _check_size(height, width)
    rng = np.random.default_rng(seed)
    n_shapes = int(rng.integers(4, 12))  # 4..11 shapes, 5..12 regions with background
    base = rng.uniform(0.1, 0.9, size=3)
    colors = rng.uniform(0.1, 0.9, size=(n_shapes + 1, 3))
    colors[0] = base
    labels = _place_shapes(rng, height, width, n_shapes)
    albedo = colors[labels]
    noise = rng.uniform(-TEXTURE_NOISE_AMP, TEXTURE_NOISE_AMP, size=(height, width, 1))
    albedo = np.clip(albedo + noise, ALBEDO_LO, ALBEDO_HI)
    return albedo, labels


def gen_albedo(seed: int, height: int, width: int) -> np.ndarray:
    """Deterministic piecewise-constant albedo with low-amplitude texture noise.

    Values lie in [0.05, 0.95]. The underlying region map has between 4 and
    12 connected components.
    """
    albedo, _ = gen_albedo_with_labels(seed, height, width)
    return albedo


def gen_shading(seed: int, height: int, width: int) -> np.ndarray:
    """Smooth shading field: planar gradient plus 1..3 radial spotlights.

    Returns an (H, W, 1) array with values in [0.2, 1.5] and adjacent-pixel
    differences at most 0.05. The raw field is affinely mapped into range
    with a scale capped so the smoothness bound always holds.
    """
    _check_size(height, width)
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    ynorm, xnorm = yy / max(height - 1, 1), xx / max(width - 1, 1)

    theta = rng.uniform(0.0, 2.0 * np.pi)
    grad_mag = rng.uniform(0.2, 1.0)
    raw = grad_mag * (np.cos(theta) * xnorm + np.sin(theta) * ynorm)

    n_spots = int(rng.integers(1, 4))
    m = min(height, width)
    for _ in range(n_spots):
        cy = rng.uniform(-0.2, 1.2) * (height - 1)
        cx = rng.uniform(-0.2, 1.2) * (width - 1)
        sigma = rng.uniform(0.25, 0.6) * m
        amp = rng.uniform(0.4, 1.5)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        raw = raw + amp * np.exp(-d2 / (2.0 * sigma * sigma))

    lo, hi = float(raw.min()), float(raw.max())
    span = hi - lo
    if span <= 0.0:
        return np.full((height, width, 1), 0.5 * (SHADING_LO + SHADING_HI))
    max_delta = 0.0
    if height > 1:
        max_delta = max(max_delta, float(np.abs(np.diff(raw, axis=0)).max()))
    if width > 1:
        max_delta = max(max_delta, float(np.abs(np.diff(raw, axis=1)).max()))
    scale = (SHADING_HI - SHADING_LO) / span
    if max_delta > 0.0:
        scale = min(scale, MAX_ADJACENT_DELTA / max_delta)
    field = np.clip(SHADING_LO + scale * (raw - lo), SHADING_LO, SHADING_HI)
    return field[:, :, None]


def compose_image(albedo: np.ndarray, shading: np.ndarray) -> np.ndarray:
    """Multiply albedo by shading and clamp to the unit interval."""
    albedo = np.asarray(albedo)
    shading = np.asarray(shading)
    if albedo.ndim != 3 or albedo.shape[2] != 3:
        raise ValueError(f"albedo must have shape (H, W, 3), got {albedo.shape}")
    if shading.ndim == 2:
        shading = shading[:, :, None]
    if shading.ndim != 3 or shading.shape[2] != 1 or shading.shape[:2] != albedo.shape[:2]:
        raise ValueError(f"shading shape {shading.shape} does not match albedo {albedo.shape}")
    return np.clip(albedo * shading, 0.0, 1.0)


def gen_scene(seed: int, k: int, height: int = 64, width: int = 64) -> SceneSample:
    """Generate one scene: a shared albedo rendered under k distinct lights."""
    if k < 2:
        raise ValueError(f"a scene needs at least 2 illuminations, got k={k}")
    _check_size(height, width)
    albedo = gen_albedo(seed, height, width)
    seed_rng = np.random.default_rng([seed, 0x11647])
    light_seeds: list[int] = []
    seen: set[int] = set()
    while len(light_seeds) < k:
        s = int(seed_rng.integers(0, 2**31 - 1))
        if s not in seen:
            seen.add(s)
            light_seeds.append(s)
    images = [compose_image(albedo, gen_shading(s, height, width)) for s in light_seeds]
    return SceneSample(albedo=albedo, images=images, light_seeds=light_seeds)


def save_image(img: np.ndarray, path: str | Path) -> None:
    """Write a float image in [0, 1] as an 8-bit RGB PNG."""
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def load_image(path: str | Path) -> np.ndarray:
    """Read an RGB image file as a float64 (H, W, 3) array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0






def write_dataset(scenes: list[SceneSample], out_dir: str | Path, force: bool = False) -> None:
    """Write scenes as 8-bit PNGs plus manifest and per-scene metadata."""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise FileExistsError(f"refusing to write into non-empty directory {out_dir} without force")
        shutil.rmtree(out_dir)
    if not scenes:
        raise ValueError("cannot write an empty dataset")
    k = len(scenes[0].images)
    h, w = scenes[0].albedo.shape[:2]
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "scene_count": len(scenes),
        "lights_per_scene": k,
        "height": int(h),
        "width": int(w),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for idx, scene in enumerate(scenes):
        if len(scene.images) != k:
            raise ValueError(f"scene {idx} has {len(scene.images)} lights, expected {k}")
        scene_dir = out_dir / f"scene_{idx}"
        scene_dir.mkdir(exist_ok=True)
        save_image(scene.albedo, scene_dir / "albedo.png")
        for j, img in enumerate(scene.images):
            save_image(img, scene_dir / f"light_{j}.png")
        (scene_dir / "meta.json").write_text(json.dumps({"light_seeds": list(map(int, scene.light_seeds))}))


def read_dataset(in_dir: str | Path) -> list[SceneSample]:
    """Read a dataset written by write_dataset. Raises DatasetFormatError on layout problems."""
    in_dir = Path(in_dir)
    manifest_path = in_dir / "manifest.json"
    if not manifest_path.is_file():
        raise DatasetFormatError(f"missing manifest: {manifest_path}", manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"malformed manifest {manifest_path}: {exc}", manifest_path) from exc
    for key in ("format_version", "scene_count", "lights_per_scene", "height", "width"):
        if not isinstance(manifest.get(key), int) or manifest[key] <= 0:
            raise DatasetFormatError(f"manifest {manifest_path} missing or invalid field '{key}'", manifest_path)
    if manifest["format_version"] != DATASET_FORMAT_VERSION:
        raise DatasetFormatError(
            f"unsupported dataset format_version {manifest['format_version']} "
            f"(expected {DATASET_FORMAT_VERSION}) in {manifest_path}",
            manifest_path,
        )
    n, k = manifest["scene_count"], manifest["lights_per_scene"]
    h, w = manifest["height"], manifest["width"]
    scenes: list[SceneSample] = []
    for idx in range(n):
        scene_dir = in_dir / f"scene_{idx}"
        if not scene_dir.is_dir():
            raise DatasetFormatError(f"missing scene directory: {scene_dir}", scene_dir)
        albedo_path = scene_dir / "albedo.png"
        if not albedo_path.is_file():
            raise DatasetFormatError(f"missing albedo image: {albedo_path}", albedo_path)
        albedo = load_image(albedo_path)
        images = []
        for j in range(k):
            light_path = scene_dir / f"light_{j}.png"
            if not light_path.is_file():
                raise DatasetFormatError(f"missing light image: {light_path}", light_path)
            img = load_image(light_path)
            if img.shape != (h, w, 3):
                raise DatasetFormatError(f"image {light_path} has shape {img.shape}, expected {(h, w, 3)}", light_path)
            images.append(img)
        if albedo.shape != (h, w, 3):
            raise DatasetFormatError(f"image {albedo_path} has shape {albedo.shape}, expected {(h, w, 3)}", albedo_path)
        meta_path = scene_dir / "meta.json"
        if not meta_path.is_file():
            raise DatasetFormatError(f"missing metadata: {meta_path}", meta_path)
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"malformed metadata {meta_path}: {exc}", meta_path) from exc
        seeds = meta.get("light_seeds")
        if not isinstance(seeds, list) or len(seeds) != k or not all(isinstance(s, int) for s in seeds):
            raise DatasetFormatError(f"metadata {meta_path} must list {k} integer light_seeds", meta_path)
        scenes.append(SceneSample(albedo=albedo, images=images, light_seeds=seeds))
    return scenes
