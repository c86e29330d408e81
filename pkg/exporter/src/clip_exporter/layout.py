"""Walker for MVTecAD/VISA-style benchmark directory layouts.

Expected tree for one class::

    <root>/<class>/train/good/*.png
    <root>/<class>/test/<category>/*.png      (category "good" = normal)
    <root>/<class>/ground_truth/<category>/*  (masks for defect categories)

File ordering is lexicographic everywhere so exports are reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
NORMAL_CATEGORY = "good"


@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    path: Path
    split: str        # "train" | "test"
    label: int        # 0 normal, 1 defect
    category: str
    mask_path: Path | None


class LayoutError(ValueError):
    """The directory tree does not match the expected benchmark layout."""


def _images_in(directory: Path) -> list[Path]:
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def _find_mask(gt_dir: Path, category: str, stem: str) -> Path:
    category_dir = gt_dir / category
    if not category_dir.is_dir():
        raise LayoutError(f"missing ground-truth directory: {category_dir}")
    for candidate in (f"{stem}_mask", stem):
        for suffix in IMAGE_SUFFIXES:
            path = category_dir / f"{candidate}{suffix}"
            if path.is_file():
                return path
    raise LayoutError(f"no mask for {category}/{stem} under {category_dir}")


def walk_class(class_dir: Path) -> list[ImageEntry]:
    """All images of one class, train first, each split sorted by id."""
    class_dir = Path(class_dir)
    train_good = class_dir / "train" / NORMAL_CATEGORY
    test_dir = class_dir / "test"
    if not train_good.is_dir():
        raise LayoutError(f"missing train/good directory: {train_good}")
    if not test_dir.is_dir():
        raise LayoutError(f"missing test directory: {test_dir}")

    entries: list[ImageEntry] = []
    train_paths = _images_in(train_good)
    if not train_paths:
        raise LayoutError(f"no training images under {train_good}")
    for path in train_paths:
        entries.append(ImageEntry(
            image_id=f"train_{NORMAL_CATEGORY}_{path.stem}",
            path=path, split="train", label=0,
            category=NORMAL_CATEGORY, mask_path=None,
        ))

    gt_dir = class_dir / "ground_truth"
    categories = sorted(p.name for p in test_dir.iterdir() if p.is_dir())
    if not categories:
        raise LayoutError(f"no test categories under {test_dir}")
    for category in categories:
        for path in _images_in(test_dir / category):
            label = 0 if category == NORMAL_CATEGORY else 1
            mask_path = None
            if label == 1:
                mask_path = _find_mask(gt_dir, category, path.stem)
            entries.append(ImageEntry(
                image_id=f"test_{category}_{path.stem}",
                path=path, split="test", label=label,
                category=category, mask_path=mask_path,
            ))
    return entries
