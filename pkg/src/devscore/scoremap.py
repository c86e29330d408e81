"""Inference: patch deviations, pixel anomaly maps, and image scores.

The pixel map is a bilinear upsample of the patch deviations followed by
an optional Gaussian blur; higher values mean more anomalous. Per-image
computation is pure, so images may be scored in parallel.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .devcore import (
    GaussianPrior,
    aggregate_topk,
    deviation_map,
    similarity_maps,
    topk_select,
)
from .embedstore import ImageRecord
from .params import HyperParams, PromptPair

MAP_SIZE = 256


@dataclass(frozen=True)
class AnomalyMap:
    """Patch scores, the derived pixel map, and the image-level score."""

    image_id: str
    patch_scores: np.ndarray  # (h, w)
    pixel_map: np.ndarray     # (256, 256)
    image_score: float
    bounds: tuple[float, float]  # (min, max) of the pixel map, for display


def patch_anomaly_map(
    record: ImageRecord, prompts: PromptPair, prior: GaussianPrior, hp: HyperParams
) -> np.ndarray:
    """Deviation of the abnormal-channel similarity for every patch, as (h, w).

    The prior must be the one frozen at the end of training; the scorer
    never re-estimates on test data.
    """
    sim = similarity_maps(record, prompts)
    scores = deviation_map(sim.s_a, prior, hp.sign_mode)
    return scores.reshape(record.grid)


def upsample_bilinear(patch_scores: np.ndarray,
                      out_h: int = MAP_SIZE, out_w: int = MAP_SIZE) -> np.ndarray:
    """Bilinear upsample with sample centers at (i + 0.5) / n (align-corners
    false); edge samples clamp, so the output never overshoots the input
    range and constant inputs stay constant."""
    patch = np.asarray(patch_scores, dtype=np.float64)
    if patch.ndim != 2 or patch.shape[0] < 1 or patch.shape[1] < 1:
        raise ValueError("patch_scores must be a non-empty 2-D grid")
    h, w = patch.shape
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    return (
        patch[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + patch[np.ix_(y0, x1)] * (1 - fy) * fx
        + patch[np.ix_(y1, x0)] * fy * (1 - fx)
        + patch[np.ix_(y1, x1)] * fy * fx
    )


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel with radius ceil(3 * sigma)."""
    if sigma <= 0:
        return np.array([1.0])
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _reflect_index(i: np.ndarray, n: int) -> np.ndarray:
    # np.pad(mode="reflect") indexing: period 2n-2, no edge repetition
    if n == 1:
        return np.zeros_like(i)
    period = 2 * n - 2
    i = np.mod(i, period)
    return np.where(i < n, i, period - i)


@lru_cache(maxsize=8)
def _conv_matrix(n: int, sigma: float) -> np.ndarray:
    """Dense 1-D convolution operator with reflect padding."""
    k = gaussian_kernel(sigma)
    radius = k.size // 2
    mat = np.zeros((n, n))
    rows = np.arange(n)
    for j, kj in enumerate(k):
        np.add.at(mat, (rows, _reflect_index(rows + j - radius, n)), kj)
    return mat


def smooth_gaussian(pixel_map: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; sigma=0 is the identity.

    The kernel sums to 1, so constant maps are preserved exactly up to
    rounding.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    m = np.asarray(pixel_map, dtype=np.float64)
    if sigma == 0:
        return m.copy()
    rows_op = _conv_matrix(m.shape[0], float(sigma))
    cols_op = _conv_matrix(m.shape[1], float(sigma))
    return rows_op @ m @ cols_op.T


def image_score(patch_scores: np.ndarray, hp: HyperParams) -> float:
    """Top-K mean of the flattened patch scores."""
    flat = np.asarray(patch_scores, dtype=np.float64).ravel()
    if flat.size == 0:
        raise ValueError("image_score needs non-empty scores")
    return aggregate_topk(flat, topk_select(flat, hp.k_percent))


def compute_anomaly_map(
    record: ImageRecord, prompts: PromptPair, prior: GaussianPrior, hp: HyperParams
) -> AnomalyMap:
    """Full inference pipeline for one image."""
    patch = patch_anomaly_map(record, prompts, prior, hp)
    pixel = upsample_bilinear(patch)
    if hp.smooth and hp.blur_sigma > 0:
        pixel = smooth_gaussian(pixel, hp.blur_sigma)
    return AnomalyMap(
        image_id=record.image_id,
        patch_scores=patch,
        pixel_map=pixel,
        image_score=image_score(patch, hp),
        bounds=(float(pixel.min()), float(pixel.max())),
    )


def write_pgm(path: str | Path, pixel_map: np.ndarray,
              vmin: float | None = None, vmax: float | None = None) -> None:
    """8-bit binary PGM (P5), min-max normalized over the single image."""
    m = np.asarray(pixel_map, dtype=np.float64)
    lo = float(m.min()) if vmin is None else vmin
    hi = float(m.max()) if vmax is None else vmax
    if hi > lo:
        scaled = (m - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(m)
    u8 = np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)
    h, w = u8.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + u8.tobytes())


def write_map(directory: str | Path, amap: AnomalyMap) -> None:
    """Persist one anomaly map: raw float tensor, sidecar JSON, and PGM."""
    from .tensorfile import write_tensor

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / f"{amap.image_id}.devt", amap.pixel_map)
    sidecar = {
        "image_id": amap.image_id,
        "min": amap.bounds[0],
        "max": amap.bounds[1],
        "image_score": amap.image_score,
    }
    (directory / f"{amap.image_id}.json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    # render from the stored float32 tensor so a later re-render from disk
    # reproduces the exact same bytes
    write_pgm(directory / f"{amap.image_id}.pgm",
              amap.pixel_map.astype(np.float32),
              amap.bounds[0], amap.bounds[1])


def render_pgms(map_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Re-render PGM heatmaps from stored raw maps and their sidecars."""
    from .tensorfile import read_tensor

    map_dir = Path(map_dir)
    out_dir = map_dir if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for tensor_path in sorted(map_dir.glob("*.devt")):
        sidecar_path = tensor_path.with_suffix(".json")
        if not sidecar_path.is_file():
            raise FileNotFoundError(f"missing sidecar for {tensor_path}")
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        pixel = read_tensor(tensor_path)
        out = out_dir / f"{tensor_path.stem}.pgm"
        write_pgm(out, pixel, sidecar["min"], sidecar["max"])
        written.append(out)
    return written
