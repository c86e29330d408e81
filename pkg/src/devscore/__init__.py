"""Deviation-guided anomaly scoring over pre-extracted patch embeddings."""

from .params import HyperParams, PromptPair

__all__ = ["HyperParams", "PromptPair"]
__version__ = "0.1.0"
