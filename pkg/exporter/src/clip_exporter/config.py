"""Export configuration."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


@dataclass(frozen=True)
class ExportConfig:
    """Everything needed to export one benchmark class.

    ``dataset_root`` must contain ``<class_name>/train/good``,
    ``<class_name>/test/<category>``, and (for defect categories)
    ``<class_name>/ground_truth/<category>``. Both MVTecAD and VISA ship
    in this layout.
    """

    dataset_root: str | Path
    class_name: str
    out_dir: str | Path
    backbone: str = "stub"
    resize: int = 256
    template_normal: str = "a photo of a normal {c}"
    template_abnormal: str = "a photo of a defective {c}"
    device: str = "cpu"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.resize < 1:
            raise ValueError(f"resize must be >= 1, got {self.resize}")
        if not self.class_name:
            raise ValueError("class_name must be non-empty")
        for name in ("template_normal", "template_abnormal"):
            template = getattr(self, name)
            if template.count("{c}") != 1:
                raise ValueError(
                    f"{name} must contain exactly one {{c}} placeholder, got {template!r}"
                )

    @property
    def class_dir(self) -> Path:
        return Path(self.dataset_root) / self.class_name

    def prompt_normal_text(self) -> str:
        return self.template_normal.format(c=self.class_name)

    def prompt_abnormal_text(self) -> str:
        return self.template_abnormal.format(c=self.class_name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset_root": str(self.dataset_root),
            "class_name": self.class_name,
            "out_dir": str(self.out_dir),
            "backbone": self.backbone,
            "resize": self.resize,
            "template_normal": self.template_normal,
            "template_abnormal": self.template_abnormal,
            "device": self.device,
            "metadata": self.metadata,
        }
