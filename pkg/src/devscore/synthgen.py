"""Synthetic embedding datasets with planted anomalies and known ground truth.

Geometry: two orthonormal anchors u_n (normal) and u_a (abnormal). Normal
patches are unit-normalized noisy copies of u_n; anomalous patches are
normal patches mixed toward u_a by ``alpha`` inside one contiguous block
per anomalous image. A small fraction of normal-image patches get doubled
noise, the "hard patch" case. Everything is deterministic from the seed.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .embedstore import MASK_SIZE, DatasetManifest, ImageRecord, write_dataset


@dataclass(frozen=True)
class SynthConfig:
    embed_dim: int = 64
    grid: tuple[int, int] = (16, 16)
    n_test: int = 20
    anomaly_fraction: float = 0.05   # fraction of patches per anomalous image
    noise_scale: float = 0.1         # per-component std of the normal cluster noise
    alpha: float = 0.5               # mix weight toward the abnormal anchor
    hard_fraction: float = 0.05      # normal-image patches with doubled noise
    seed: int = 0

    def __post_init__(self) -> None:
        if self.embed_dim < 2:
            raise ValueError(f"embed_dim must be >= 2, got {self.embed_dim}")
        if not 0 < self.anomaly_fraction < 1:
            raise ValueError(f"anomaly_fraction must be in (0, 1), got {self.anomaly_fraction}")
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ValueError(f"grid must be positive, got {self.grid}")
        if self.n_test < 2:
            raise ValueError(f"n_test must be >= 2, got {self.n_test}")


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _anchors(rng: np.random.Generator, d: int) -> tuple[np.ndarray, np.ndarray]:
    q, _ = np.linalg.qr(rng.standard_normal((d, 2)))
    return q[:, 0].copy(), q[:, 1].copy()


def _block_shape(n_block: int, h: int, w: int) -> tuple[int, int]:
    bh = max(1, min(h, int(round(math.sqrt(n_block)))))
    bw = max(1, min(w, int(math.ceil(n_block / bh))))
    return bh, bw


def _patch_pixel_bounds(i: int, n: int) -> tuple[int, int]:
    # pixel rows/cols covered by patch i of n along one axis
    return (i * MASK_SIZE) // n, ((i + 1) * MASK_SIZE) // n


def generate(config: SynthConfig) -> DatasetManifest:
    """Build the dataset in memory; see module docstring for the geometry."""
    rng = np.random.default_rng(config.seed)
    d = config.embed_dim
    h, w = config.grid
    P = h * w
    u_n, u_a = _anchors(rng, d)

    def normal_image() -> np.ndarray:
        noise = rng.standard_normal((P, d)) * config.noise_scale
        hard = rng.random(P) < config.hard_fraction
        noise[hard] *= 2.0
        return _unit_rows(u_n[None, :] + noise)

    n_block = max(1, int(round(config.anomaly_fraction * P)))
    bh, bw = _block_shape(n_block, h, w)

    records = []
    blocks: dict[str, list[int]] = {}
    train_z = normal_image().astype(np.float32)
    records.append(ImageRecord("train_000", "train", 0, (h, w), train_z))

    n_anom = config.n_test // 2
    for i in range(config.n_test):
        rid = f"test_{i:03d}"
        z = normal_image()
        mask = np.zeros((MASK_SIZE, MASK_SIZE), dtype=np.uint8)
        label = 0
        if i >= config.n_test - n_anom:
            label = 1
            r0 = int(rng.integers(0, h - bh + 1))
            c0 = int(rng.integers(0, w - bw + 1))
            idx = np.array([r * w + c
                            for r in range(r0, r0 + bh)
                            for c in range(c0, c0 + bw)])
            mixed = (1.0 - config.alpha) * z[idx] + config.alpha * u_a[None, :]
            z[idx] = _unit_rows(mixed)
            y0, _ = _patch_pixel_bounds(r0, h)
            _, y1 = _patch_pixel_bounds(r0 + bh - 1, h)
            x0, _ = _patch_pixel_bounds(c0, w)
            _, x1 = _patch_pixel_bounds(c0 + bw - 1, w)
            mask[y0:y1, x0:x1] = 255
            blocks[rid] = [int(j) for j in idx]
        records.append(ImageRecord(rid, "test", label, (h, w),
                                   z.astype(np.float32), mask))

    metadata = {
        "generator": "synthgen",
        "config": {**asdict(config), "grid": list(config.grid)},
        "anomalous_blocks": blocks,
    }
    return DatasetManifest(
        embed_dim=d,
        class_name="synthetic",
        grid=(h, w),
        records=tuple(records),
        prompt_normal=u_n.astype(np.float32),
        prompt_abnormal=u_a.astype(np.float32),
        metadata=metadata,
    )


def generate_to(config: SynthConfig, directory: str | Path) -> DatasetManifest:
    """Generate and write an embedstore directory; byte-identical per seed."""
    manifest = generate(config)
    write_dataset(manifest, directory)
    return manifest
