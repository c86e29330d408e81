"""On-disk dataset of patch embeddings, prompt embeddings, labels, and masks.

Directory layout::

    manifest.json
    prompts/normal.devt
    prompts/abnormal.devt
    images/<id>.devt
    masks/<id>.devt        (optional per record)

Loaded manifests are immutable and safe to share across threads; reads are
pure, writes require exclusive access to the target directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorfile import read_tensor, write_tensor

FORMAT_VERSION = 1
MASK_SIZE = 256
UNIT_NORM_TOL = 1e-5

SPLITS = ("train", "test")


class DatasetValidationError(ValueError):
    """Raised when a dataset violates its invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class ImageRecord:
    """One image's patch embeddings plus label and optional pixel mask."""

    image_id: str
    split: str
    label: int
    grid: tuple[int, int]
    embeddings: np.ndarray          # (P, d) float32, unit-norm rows
    mask: np.ndarray | None = None  # (256, 256) uint8, values {0, 255}

    @property
    def num_patches(self) -> int:
        return self.grid[0] * self.grid[1]


@dataclass(frozen=True)
class DatasetManifest:
    """Validated collection of image records plus the two prompt vectors."""

    embed_dim: int
    class_name: str
    grid: tuple[int, int]
    records: tuple[ImageRecord, ...]
    prompt_normal: np.ndarray    # (d,)
    prompt_abnormal: np.ndarray  # (d,)
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def split_records(self, split: str) -> list[ImageRecord]:
        return [r for r in self.records if r.split == split]


def validate(manifest: DatasetManifest) -> list[str]:
    """Return a list of invariant violations; empty iff the dataset is valid.

    Violations are data, not errors: each entry names the record id, the
    offending field, and the observed value.
    """
    v: list[str] = []
    if not manifest.records:
        v.append("dataset has no images")
    d = manifest.embed_dim
    for prompt, name in ((manifest.prompt_normal, "prompt_normal"),
                         (manifest.prompt_abnormal, "prompt_abnormal")):
        if prompt.shape != (d,):
            v.append(f"{name}: shape {prompt.shape}, expected ({d},)")
    seen: set[str] = set()
    for rec in manifest.records:
        rid = rec.image_id
        if rid in seen:
            v.append(f"{rid}: duplicate image id")
        seen.add(rid)
        if rec.split not in SPLITS:
            v.append(f"{rid}: split: unknown value {rec.split!r}")
        if rec.label not in (0, 1):
            v.append(f"{rid}: label: {rec.label} not in {{0, 1}}")
        if rec.split == "train" and rec.label != 0:
            v.append(f"{rid}: label: train split contains anomalous label {rec.label}")
        h, w = rec.grid
        if h < 1 or w < 1:
            v.append(f"{rid}: grid: non-positive {rec.grid}")
        if rec.grid != manifest.grid:
            v.append(f"{rid}: grid: {rec.grid} differs from dataset grid {manifest.grid}")
        if rec.embeddings.ndim != 2 or rec.embeddings.shape != (rec.num_patches, d):
            v.append(
                f"{rid}: embeddings: shape {rec.embeddings.shape}, "
                f"expected ({rec.num_patches}, {d})"
            )
            continue
        norms = np.linalg.norm(rec.embeddings.astype(np.float64), axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
        if bad.size:
            p = int(bad[0])
            v.append(
                f"{rid}: embeddings: row {p} has norm {norms[p]:.6f}, expected 1 "
                f"within {UNIT_NORM_TOL:g} ({bad.size} rows total)"
            )
        if rec.mask is not None:
            if rec.mask.shape != (MASK_SIZE, MASK_SIZE) or rec.mask.dtype != np.uint8:
                v.append(
                    f"{rid}: mask: shape {rec.mask.shape} dtype {rec.mask.dtype}, "
                    f"expected ({MASK_SIZE}, {MASK_SIZE}) uint8"
                )
            elif not np.isin(rec.mask, (0, 255)).all():
                v.append(f"{rid}: mask: contains values outside {{0, 255}}")
    return v


def write_dataset(manifest: DatasetManifest, directory: str | Path) -> None:
    """Write a validated manifest to ``directory``; round-trips bit-exactly."""
    violations = validate(manifest)
    if violations:
        raise DatasetValidationError(violations)
    root = Path(directory)
    for sub in ("prompts", "images", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_tensor(root / "prompts" / "normal.devt", manifest.prompt_normal)
    write_tensor(root / "prompts" / "abnormal.devt", manifest.prompt_abnormal)
    records_json = []
    for rec in manifest.records:
        write_tensor(root / "images" / f"{rec.image_id}.devt", rec.embeddings)
        entry = {
            "id": rec.image_id,
            "split": rec.split,
            "label": rec.label,
            "grid": list(rec.grid),
            "embeddings": f"images/{rec.image_id}.devt",
            "mask": None,
        }
        if rec.mask is not None:
            write_tensor(root / "masks" / f"{rec.image_id}.devt", rec.mask)
            entry["mask"] = f"masks/{rec.image_id}.devt"
        records_json.append(entry)
    doc = {
        "format_version": manifest.format_version,
        "embed_dim": manifest.embed_dim,
        "class_name": manifest.class_name,
        "grid": list(manifest.grid),
        "prompts": {"normal": "prompts/normal.devt", "abnormal": "prompts/abnormal.devt"},
        "records": records_json,
        "metadata": manifest.metadata,
    }
    (root / "manifest.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_dataset(directory: str | Path) -> DatasetManifest:
    """Load and fully re-validate a dataset directory."""
    root = Path(directory)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"missing manifest: {manifest_path}")
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    if doc.get("format_version") != FORMAT_VERSION:
        raise DatasetValidationError(
            [f"manifest format_version {doc.get('format_version')}, expected {FORMAT_VERSION}"]
        )
    prompt_normal = read_tensor(root / doc["prompts"]["normal"])
    prompt_abnormal = read_tensor(root / doc["prompts"]["abnormal"])
    records = []
    for entry in doc["records"]:
        emb = read_tensor(root / entry["embeddings"])
        mask = read_tensor(root / entry["mask"]) if entry["mask"] else None
        records.append(
            ImageRecord(
                image_id=entry["id"],
                split=entry["split"],
                label=int(entry["label"]),
                grid=tuple(entry["grid"]),
                embeddings=emb,
                mask=mask,
            )
        )
    manifest = DatasetManifest(
        embed_dim=int(doc["embed_dim"]),
        class_name=doc["class_name"],
        grid=tuple(doc["grid"]),
        records=tuple(records),
        prompt_normal=prompt_normal,
        prompt_abnormal=prompt_abnormal,
        metadata=doc.get("metadata", {}),
    )
    violations = validate(manifest)
    if violations:
        raise DatasetValidationError(violations)
    return manifest
