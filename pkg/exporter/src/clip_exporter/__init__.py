"""Export patch/prompt embeddings from benchmark image layouts.

Produces embedstore-format dataset directories (manifest.json plus DEVT
tensor files) from MVTecAD/VISA-style trees, using either a pretrained
CLIP backbone or a deterministic stub for testing.
"""
from .config import ExportConfig
from .export import export_dataset, export_images, export_masks, export_prompts

__version__ = "0.1.0"

__all__ = [
    "ExportConfig",
    "export_dataset",
    "export_images",
    "export_masks",
    "export_prompts",
    "__version__",
]
