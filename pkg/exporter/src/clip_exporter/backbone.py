"""Backbones that map images to patch embeddings and text to prompt embeddings.

Two implementations: a deterministic stub for tests and offline runs, and
a CLIP wrapper (optional dependency) for real exports. Both return
unit-norm float32 embeddings in a shared space, so cosine similarity is a
plain dot product downstream.
"""
from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np


class Backbone(Protocol):
    def encode_image(self, image: np.ndarray) -> tuple[tuple[int, int], np.ndarray]:
        """image (H, W, 3) uint8 -> ((grid_h, grid_w), (P, d) unit-norm float32)."""
        ...

    def encode_text(self, text: str) -> np.ndarray:
        """text -> (d,) unit-norm float32."""
        ...


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=-1, keepdims=True)
    norms[norms == 0] = 1.0
    return m / norms


class StubBackbone:
    """Deterministic backbone with no weights.

    Per-patch pixel statistics (color moments, gradient magnitudes,
    position) are pushed through a fixed random projection; text hashes
    seed a fixed random direction. Output depends only on the input
    bytes, so exports are reproducible anywhere.
    """

    N_FEATURES = 10

    def __init__(self, dim: int = 64, patch_size: int = 32):
        if dim < 2 or patch_size < 1:
            raise ValueError("dim must be >= 2 and patch_size >= 1")
        self.dim = dim
        self.patch_size = patch_size
        rng = np.random.default_rng(0xC11F)
        self._projection = rng.standard_normal((self.N_FEATURES, dim))

    def encode_image(self, image: np.ndarray) -> tuple[tuple[int, int], np.ndarray]:
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
        img /= 255.0
        h, w = img.shape[:2]
        gh, gw = max(1, h // self.patch_size), max(1, w // self.patch_size)
        features = np.empty((gh * gw, self.N_FEATURES))
        for r in range(gh):
            for c in range(gw):
                y0, y1 = (r * h) // gh, ((r + 1) * h) // gh
                x0, x1 = (c * w) // gw, ((c + 1) * w) // gw
                cell = img[y0:y1, x0:x1]
                gray = cell.mean(axis=2)
                dy = np.abs(np.diff(gray, axis=0)).mean() if gray.shape[0] > 1 else 0.0
                dx = np.abs(np.diff(gray, axis=1)).mean() if gray.shape[1] > 1 else 0.0
                features[r * gw + c] = [
                    *cell.mean(axis=(0, 1)),
                    *cell.std(axis=(0, 1)),
                    dy, dx,
                    r / gh, c / gw,
                ]
        emb = np.tanh(features @ self._projection)
        return (gh, gw), _unit_rows(emb).astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        return (v / np.linalg.norm(v)).astype(np.float32)


class ClipBackbone:
    """CLIP vision/text encoders from the transformers library.

    Patch embeddings are the final-layer vision patch tokens projected
    into the joint image-text space, so they live in the same space as
    the text embeddings.
    """

    def __init__(self, model_name: str = "openai/clip-vit-base-patch16",
                 device: str = "cpu"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "CLIP export needs torch and transformers; install the "
                "[clip] extra or use the stub backbone"
            ) from exc
        self._torch = torch
        self.device = device
        self.model = CLIPModel.from_pretrained(model_name).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_name)
        self.model_name = model_name

    def encode_image(self, image: np.ndarray) -> tuple[tuple[int, int], np.ndarray]:
        torch = self._torch
        from PIL import Image

        pil = Image.fromarray(np.asarray(image, dtype=np.uint8))
        inputs = self.processor(images=pil, return_tensors="pt").to(self.device)
        with torch.no_grad():
            vision = self.model.vision_model(**inputs)
            tokens = vision.last_hidden_state[:, 1:, :]  # drop the CLS token
            tokens = self.model.vision_model.post_layernorm(tokens)
            tokens = self.model.visual_projection(tokens)
        emb = tokens[0].cpu().numpy().astype(np.float64)
        side = int(round(np.sqrt(emb.shape[0])))
        if side * side != emb.shape[0]:
            raise RuntimeError(f"non-square patch token count {emb.shape[0]}")
        return (side, side), _unit_rows(emb).astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        torch = self._torch
        inputs = self.processor(text=[text], return_tensors="pt", padding=True)
        inputs = {k: v.to(self.device) for k, v in inputs.items()}
        with torch.no_grad():
            features = self.model.get_text_features(**inputs)
        v = features[0].cpu().numpy().astype(np.float64)
        return (v / np.linalg.norm(v)).astype(np.float32)


def load_backbone(name: str, device: str = "cpu") -> Backbone:
    """``stub`` (optionally ``stub:<dim>:<patch>``) or a CLIP model name."""
    if name == "stub" or name.startswith("stub:"):
        parts = name.split(":")[1:]
        kwargs = {}
        if len(parts) >= 1 and parts[0]:
            kwargs["dim"] = int(parts[0])
        if len(parts) >= 2:
            kwargs["patch_size"] = int(parts[1])
        return StubBackbone(**kwargs)
    return ClipBackbone(name, device)
