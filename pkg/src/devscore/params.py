"""Hyperparameters and prompt-embedding state shared across modules."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

SIGN_MODES = ("signed", "absolute")
PRIOR_MODES = ("empirical", "reference")


@dataclass(frozen=True)
class HyperParams:
    """Knobs for training, scoring, and evaluation.

    ``dev_weight`` is the global weight of the deviation term relative to
    the alignment term, ``margin`` the minimum z-score anomalous bags must
    reach, ``k_percent`` the Top-K bag size as a percentage of patches.
    ``sign_mode`` controls scoring-time deviations; the training loss uses
    ``train_sign_mode`` (absolute z-scores by default, which keeps the
    one-shot objective from drifting along mean-shift directions).
    """

    dev_weight: float = 1.0
    margin: float = 5.0
    k_percent: float = 10.0
    lr: float = 1e-3
    epochs: int = 200
    seed: int = 0
    prior_mode: str = "empirical"
    sign_mode: str = "signed"
    train_sign_mode: str = "absolute"
    tau: float = 0.07
    pseudo_anomaly: bool = False
    pseudo_alpha: float = 0.5
    shared_delta: bool = False
    blur_sigma: float = 4.0
    smooth: bool = True
    reference_count: int = 100_000

    def __post_init__(self) -> None:
        if self.dev_weight < 0:
            raise ValueError(f"dev_weight must be >= 0, got {self.dev_weight}")
        if self.margin <= 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if not 0 < self.k_percent <= 100:
            raise ValueError(f"k_percent must be in (0, 100], got {self.k_percent}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.sign_mode not in SIGN_MODES or self.train_sign_mode not in SIGN_MODES:
            raise ValueError(f"sign modes must be one of {SIGN_MODES}")
        if self.prior_mode not in PRIOR_MODES:
            raise ValueError(f"prior_mode must be one of {PRIOR_MODES}")
        if self.blur_sigma < 0:
            raise ValueError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if not 0 < self.pseudo_alpha <= 1:
            raise ValueError(f"pseudo_alpha must be in (0, 1], got {self.pseudo_alpha}")

    def with_(self, **kwargs: Any) -> "HyperParams":
        return replace(self, **kwargs)

    def to_dict(self) -> dict[str, Any]:
        from dataclasses import asdict

        return asdict(self)


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return v / n


@dataclass
class PromptPair:
    """Base prompt embeddings plus learnable delta vectors.

    Base embeddings are immutable after construction; the effective
    embeddings are the renormalized sums ``normalize(base + shared + own)``.
    """

    base_normal: np.ndarray
    base_abnormal: np.ndarray
    delta_normal: np.ndarray
    delta_abnormal: np.ndarray
    delta_shared: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.base_normal = np.array(self.base_normal, dtype=np.float64)
        self.base_abnormal = np.array(self.base_abnormal, dtype=np.float64)
        if self.base_normal.shape != self.base_abnormal.shape or self.base_normal.ndim != 1:
            raise ValueError("base prompt embeddings must be 1-D vectors of equal dim")
        self.base_normal.setflags(write=False)
        self.base_abnormal.setflags(write=False)
        self.delta_normal = np.array(self.delta_normal, dtype=np.float64)
        self.delta_abnormal = np.array(self.delta_abnormal, dtype=np.float64)
        if self.delta_shared is None:
            self.delta_shared = np.zeros_like(self.base_normal)
        else:
            self.delta_shared = np.array(self.delta_shared, dtype=np.float64)
        for name in ("delta_normal", "delta_abnormal", "delta_shared"):
            if getattr(self, name).shape != self.base_normal.shape:
                raise ValueError(f"{name} must match the base embedding dim")

    @property
    def dim(self) -> int:
        return self.base_normal.shape[0]

    @property
    def vector_normal(self) -> np.ndarray:
        """Unnormalized effective normal prompt vector."""
        return self.base_normal + self.delta_shared + self.delta_normal

    @property
    def vector_abnormal(self) -> np.ndarray:
        return self.base_abnormal + self.delta_shared + self.delta_abnormal

    @property
    def effective_normal(self) -> np.ndarray:
        return _unit(self.vector_normal)

    @property
    def effective_abnormal(self) -> np.ndarray:
        return _unit(self.vector_abnormal)

    def copy(self) -> "PromptPair":
        return PromptPair(
            self.base_normal,
            self.base_abnormal,
            self.delta_normal.copy(),
            self.delta_abnormal.copy(),
            self.delta_shared.copy(),
        )
