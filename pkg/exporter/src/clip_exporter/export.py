"""Export one benchmark class into an embedstore dataset directory."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .backbone import Backbone, load_backbone
from .config import ExportConfig
from .layout import ImageEntry, walk_class
from .tensorio import write_tensor

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MASK_SIZE = 256


def _load_rgb(path: Path, resize: int) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        if rgb.size != (resize, resize):
            if rgb.size[0] < resize or rgb.size[1] < resize:
                logger.info("upscaling %s from %s to %dx%d",
                            path.name, rgb.size, resize, resize)
            rgb = rgb.resize((resize, resize), Image.BILINEAR)
        return np.asarray(rgb, dtype=np.uint8)


def _load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        gray = img.convert("L").resize((MASK_SIZE, MASK_SIZE), Image.NEAREST)
    return np.where(np.asarray(gray) > 127, 255, 0).astype(np.uint8)


def export_prompts(config: ExportConfig,
                   backbone: Backbone) -> tuple[np.ndarray, np.ndarray]:
    """Encode both prompt templates and write prompts/{normal,abnormal}.devt."""
    e_n = backbone.encode_text(config.prompt_normal_text())
    e_a = backbone.encode_text(config.prompt_abnormal_text())
    if e_n.shape != e_a.shape:
        raise RuntimeError(
            f"prompt embedding dims differ: {e_n.shape} vs {e_a.shape}")
    out = Path(config.out_dir) / "prompts"
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "normal.devt", e_n)
    write_tensor(out / "abnormal.devt", e_a)
    return e_n, e_a


def export_images(config: ExportConfig, backbone: Backbone,
                  entries: list[ImageEntry] | None = None) -> list[dict]:
    """Encode and write patch embeddings; returns manifest record entries.

    One-shot protocol: only the first (lexicographically) training image
    is exported for the train split; all test images are exported.
    """
    if entries is None:
        entries = walk_class(config.class_dir)
    train = [e for e in entries if e.split == "train"]
    selected = train[:1] + [e for e in entries if e.split == "test"]
    if len(train) > 1:
        logger.info("one-shot export: using %s, skipping %d other train images",
                    train[0].image_id, len(train) - 1)

    out = Path(config.out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records: list[dict] = []
    grid = None
    for entry in selected:
        image = _load_rgb(entry.path, config.resize)
        image_grid, emb = backbone.encode_image(image)
        if grid is None:
            grid = image_grid
        elif image_grid != grid:
            raise RuntimeError(
                f"{entry.image_id}: grid {image_grid} differs from {grid}")
        write_tensor(out / "images" / f"{entry.image_id}.devt", emb)
        records.append({
            "id": entry.image_id,
            "split": entry.split,
            "label": entry.label,
            "grid": list(image_grid),
            "embeddings": f"images/{entry.image_id}.devt",
            "mask": None,
        })
    return records


def export_masks(config: ExportConfig,
                 entries: list[ImageEntry] | None = None) -> dict[str, str]:
    """Write 256x256 binarized masks for every test image.

    Defect images use their ground-truth annotation (nearest-neighbor
    resize, binarized to {0, 255}); normal test images get all zeros.
    """
    if entries is None:
        entries = walk_class(config.class_dir)
    out = Path(config.out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    written: dict[str, str] = {}
    for entry in entries:
        if entry.split != "test":
            continue
        if entry.mask_path is not None:
            mask = _load_mask(entry.mask_path)
        else:
            mask = np.zeros((MASK_SIZE, MASK_SIZE), dtype=np.uint8)
        rel = f"masks/{entry.image_id}.devt"
        write_tensor(out / rel, mask)
        written[entry.image_id] = rel
    return written


def export_dataset(config: ExportConfig, backbone: Backbone | None = None) -> Path:
    """Full export: prompts, images, masks, and the manifest."""
    if backbone is None:
        backbone = load_backbone(config.backbone, config.device)
    entries = walk_class(config.class_dir)
    e_n, _ = export_prompts(config, backbone)
    records = export_images(config, backbone, entries)
    masks = export_masks(config, entries)
    for record in records:
        if record["id"] in masks:
            record["mask"] = masks[record["id"]]

    embed_dim = int(e_n.shape[0])
    grid = records[0]["grid"]
    bad = [r["id"] for r in records
           if len(np.fromfile(Path(config.out_dir) / r["embeddings"],
                              dtype=np.uint8)) == 0]
    if bad:
        raise RuntimeError(f"empty embedding files: {bad}")

    doc = {
        "format_version": FORMAT_VERSION,
        "embed_dim": embed_dim,
        "class_name": config.class_name,
        "grid": grid,
        "prompts": {"normal": "prompts/normal.devt",
                    "abnormal": "prompts/abnormal.devt"},
        "records": records,
        "metadata": {
            "exporter": "clip_exporter",
            "backbone": config.backbone,
            "grid": grid,
            "resize": config.resize,
            "templates": {
                "normal": config.template_normal,
                "abnormal": config.template_abnormal,
            },
            **config.metadata,
        },
    }
    out = Path(config.out_dir)
    (out / "manifest.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out
