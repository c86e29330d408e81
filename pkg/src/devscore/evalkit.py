"""AUROC metrics and hyperparameter sensitivity sweeps.

AUROC is the Mann-Whitney U statistic divided by n_pos * n_neg, with tied
scores counted as half wins; internal values stay in [0, 1] and are only
formatted as percentages at the report layer. Metric computation is pure;
sweep points are independent and ordered by the given value list.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import scoremap
from .devcore import GaussianPrior
from .embedstore import DatasetManifest
from .params import HyperParams, PromptPair
from .trainer import fit

CSV_HEADER = "class,parameter,value,level,auroc,n_pos,n_neg"

SWEEPABLE = {
    "lambda": "dev_weight",
    "k": "k_percent",
    "a": "margin",
}


class UndefinedMetricError(ValueError):
    """AUROC requested on a single-class input."""


@dataclass(frozen=True)
class EvalRecord:
    class_name: str
    level: str            # "image" | "pixel" | "pixel-per-image"
    auroc: float
    n_pos: int
    n_neg: int
    hp: HyperParams
    parameter: str = "-"
    value: str = "-"


@dataclass(frozen=True)
class SweepTable:
    parameter: str
    values: tuple
    records: tuple[EvalRecord, ...] = field(default_factory=tuple)


def _midranks(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based) with ties sharing their mid-rank."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    n = x.size
    # boundaries of tie groups in the sorted array
    starts = np.concatenate(([0], np.flatnonzero(np.diff(sx)) + 1))
    ends = np.concatenate((starts[1:], [n]))
    ranks_sorted = np.empty(n, dtype=np.float64)
    for s, e in zip(starts, ends):
        ranks_sorted[s:e] = 0.5 * (s + 1 + e)
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = ranks_sorted
    return ranks


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Tie-aware AUROC via the rank-sum form of the Mann-Whitney U."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC undefined with {n_pos} positives and {n_neg} negatives"
        )
    ranks = _midranks(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pixel_auroc(maps: list[np.ndarray], masks: list[np.ndarray]) -> float:
    """AUROC over all pixels pooled across the test set; mask 255 -> label 1."""
    if len(maps) != len(masks):
        raise ValueError("maps and masks differ in length")
    flat_scores = []
    flat_labels = []
    for i, (m, mask) in enumerate(zip(maps, masks)):
        if m.shape != mask.shape:
            raise ValueError(f"map {i}: shape {m.shape} != mask shape {mask.shape}")
        flat_scores.append(np.asarray(m, dtype=np.float64).ravel())
        flat_labels.append((np.asarray(mask).ravel() > 0).astype(np.int8))
    return auroc(np.concatenate(flat_scores), np.concatenate(flat_labels))


def evaluate(
    manifest: DatasetManifest,
    prompts: PromptPair,
    prior: GaussianPrior,
    hp: HyperParams,
    *,
    per_image_pixel: bool = False,
    parameter: str = "-",
    value: str = "-",
) -> list[EvalRecord]:
    """Image- and pixel-level AUROC over the test split."""
    test = sorted(manifest.split_records("test"), key=lambda r: r.image_id)
    if not test:
        raise ValueError("test split is empty")
    missing = [r.image_id for r in test if r.mask is None]
    if missing:
        raise ValueError(f"pixel evaluation requires masks; missing for {missing}")
    amaps = [scoremap.compute_anomaly_map(r, prompts, prior, hp) for r in test]
    records: list[EvalRecord] = []

    image_labels = np.array([r.label for r in test])
    if 0 < image_labels.sum() < image_labels.size:
        image_scores = np.array([a.image_score for a in amaps])
        records.append(EvalRecord(
            class_name=manifest.class_name, level="image",
            auroc=auroc(image_scores, image_labels),
            n_pos=int(image_labels.sum()),
            n_neg=int(image_labels.size - image_labels.sum()),
            hp=hp, parameter=parameter, value=value,
        ))

    maps = [a.pixel_map for a in amaps]
    masks = [r.mask for r in test]
    n_pos = int(sum((m > 0).sum() for m in masks))
    n_neg = int(sum(m.size for m in masks) - n_pos)
    records.append(EvalRecord(
        class_name=manifest.class_name, level="pixel",
        auroc=pixel_auroc(maps, masks), n_pos=n_pos, n_neg=n_neg,
        hp=hp, parameter=parameter, value=value,
    ))

    if per_image_pixel:
        per = [
            auroc(m.ravel(), (mask.ravel() > 0).astype(np.int8))
            for m, mask in zip(maps, masks)
            if 0 < (mask > 0).sum() < mask.size
        ]
        records.append(EvalRecord(
            class_name=manifest.class_name, level="pixel-per-image",
            auroc=float(np.mean(per)), n_pos=n_pos, n_neg=n_neg,
            hp=hp, parameter=parameter, value=value,
        ))
    return records


def fit_and_evaluate(manifest: DatasetManifest, hp: HyperParams,
                     **kwargs) -> list[EvalRecord]:
    prompts, prior, _ = fit(manifest, hp)
    return evaluate(manifest, prompts, prior, hp, **kwargs)


def sweep(manifest: DatasetManifest, base_hp: HyperParams,
          parameter: str, values: list[float]) -> SweepTable:
    """Re-run fit + evaluate varying exactly one hyperparameter.

    ``parameter`` is one of ``lambda`` (deviation weight), ``k`` (Top-K
    percent), or ``a`` (margin). The seed is shared across points, so a
    singleton value list reproduces a standalone evaluation bit-exactly.
    """
    if parameter not in SWEEPABLE:
        raise ValueError(f"parameter must be one of {sorted(SWEEPABLE)}, got {parameter!r}")
    if not values:
        raise ValueError("values must be non-empty")
    field_name = SWEEPABLE[parameter]
    records: list[EvalRecord] = []
    for value in values:
        hp = base_hp.with_(**{field_name: value})
        records.extend(
            fit_and_evaluate(manifest, hp, parameter=parameter, value=f"{value:g}")
        )
    return SweepTable(parameter=parameter, values=tuple(values), records=tuple(records))


def write_csv(records: list[EvalRecord] | SweepTable, path: str | Path) -> None:
    """UTF-8 CSV, LF line endings, AUROC at 6 decimal places."""
    if isinstance(records, SweepTable):
        records = list(records.records)
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.class_name},{r.parameter},{r.value},{r.level},"
            f"{r.auroc:.6f},{r.n_pos},{r.n_neg}"
        )
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
