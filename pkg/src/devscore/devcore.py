"""Similarity maps, Gaussian prior, deviation scores, and Top-K selection.

All functions are pure; reductions accumulate in float64. The reference
prior owns its seeded generator per call, so concurrent use is safe.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .embedstore import ImageRecord
from .params import PromptPair

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class SimilarityMap:
    """Per-patch cosine similarities against both prompt channels."""

    s_n: np.ndarray  # (P,) in [-1, 1]
    s_a: np.ndarray  # (P,) in [-1, 1]
    grid: tuple[int, int]


@dataclass(frozen=True)
class GaussianPrior:
    """(mu, sigma) of the normal similarity distribution, with provenance."""

    mu: float
    sigma: float
    mode: str               # "empirical" | "reference"
    sample_count: int
    seed: int | None = None
    clamped: bool = False


@dataclass(frozen=True)
class DeviationResult:
    """Per-patch deviations plus the Top-K bag and its mean."""

    scores: np.ndarray        # (P,)
    selected: np.ndarray      # (k,) sorted patch indices
    image_score: float
    sign_mode: str


def cosine_similarity(z: np.ndarray, e: np.ndarray) -> float:
    """Cosine of the angle between ``z`` and ``e``, clamped to [-1, 1]."""
    z = np.asarray(z, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    nz, ne = np.linalg.norm(z), np.linalg.norm(e)
    if nz == 0.0 or ne == 0.0:
        raise ValueError("cosine_similarity undefined for zero-norm input")
    return float(np.clip(np.dot(z, e) / (nz * ne), -1.0, 1.0))


def similarity_maps(record: ImageRecord, prompts: PromptPair) -> SimilarityMap:
    """Both similarity channels for every patch, row-major grid order.

    Stored embeddings are unit-norm, so the cosine reduces to a dot
    product against the effective (renormalized) prompt embeddings.
    """
    if record.embeddings.shape[1] != prompts.dim:
        raise ValueError(
            f"{record.image_id}: embedding dim {record.embeddings.shape[1]} "
            f"!= prompt dim {prompts.dim}"
        )
    z = record.embeddings.astype(np.float64)
    s_n = np.clip(z @ prompts.effective_normal, -1.0, 1.0)
    s_a = np.clip(z @ prompts.effective_abnormal, -1.0, 1.0)
    return SimilarityMap(s_n=s_n, s_a=s_a, grid=record.grid)


def estimate_prior(
    scores: np.ndarray | None = None,
    *,
    mode: str = "empirical",
    count: int | None = None,
    seed: int | None = None,
) -> GaussianPrior:
    """Fit (mu, sigma) either from observed similarities or from a
    standard-normal reference sample.

    Empirical mode uses the sample mean and sample standard deviation
    (denominator n-1) of ``scores``. Reference mode draws ``count``
    pseudo-random standard-normal values with the given seed. Sigma is
    clamped at 1e-8 (with a warning) to survive the degenerate one-shot
    case where all similarities coincide.
    """
    if mode == "empirical":
        if scores is None or len(np.atleast_1d(scores)) < 2:
            raise ValueError("empirical prior needs at least 2 scores")
        sample = np.asarray(scores, dtype=np.float64).ravel()
        mu = float(sample.mean())
        sigma = float(sample.std(ddof=1))
        n = sample.size
    elif mode == "reference":
        if count is None or count < 1000:
            raise ValueError("reference prior needs count >= 1000")
        rng = np.random.default_rng(seed)
        draws = rng.standard_normal(count)
        mu = float(draws.mean())
        sigma = float(draws.std(ddof=1))
        n = count
    else:
        raise ValueError(f"unknown prior mode {mode!r}")
    clamped = sigma < SIGMA_FLOOR
    if clamped:
        warnings.warn(
            f"prior sigma {sigma:g} underflowed; clamped to {SIGMA_FLOOR:g}",
            RuntimeWarning,
            stacklevel=2,
        )
        sigma = SIGMA_FLOOR
    return GaussianPrior(mu=mu, sigma=sigma, mode=mode, sample_count=n,
                         seed=seed, clamped=clamped)


def deviation_map(s: np.ndarray, prior: GaussianPrior, sign_mode: str = "absolute") -> np.ndarray:
    """Per-patch z-scores against the prior.

    Absolute mode returns |s - mu| / sigma; signed mode keeps the sign,
    which lets high and low similarities be told apart downstream.
    """
    if prior.sigma <= 0:
        raise ValueError("prior sigma must be positive")
    z = (np.asarray(s, dtype=np.float64) - prior.mu) / prior.sigma
    if sign_mode == "absolute":
        return np.abs(z)
    if sign_mode == "signed":
        return z
    raise ValueError(f"unknown sign mode {sign_mode!r}")


def topk_count(k_percent: float, num_patches: int) -> int:
    """Bag size: max(1, round(k_percent/100 * P)), half-away-from-zero."""
    return max(1, int(math.floor(k_percent / 100.0 * num_patches + 0.5)))


def topk_select(d: np.ndarray, k_percent: float) -> np.ndarray:
    """Sorted indices of the k largest deviations, ties to the lower index."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ValueError("topk_select needs a non-empty 1-D vector")
    if not 0 < k_percent <= 100:
        raise ValueError(f"k_percent must be in (0, 100], got {k_percent}")
    k = topk_count(k_percent, d.size)
    # stable sort on the negated values keeps equal entries in index order
    order = np.argsort(-d, kind="stable")[:k]
    return np.sort(order)


def aggregate_topk(d: np.ndarray, selected: np.ndarray) -> float:
    """Arithmetic mean of the selected deviations, accumulated in float64."""
    d = np.asarray(d, dtype=np.float64)
    selected = np.asarray(selected)
    if selected.size == 0:
        raise ValueError("aggregate_topk needs a non-empty selection")
    if selected.min() < 0 or selected.max() >= d.size:
        raise ValueError("selection contains out-of-range indices")
    return float(d[selected].mean())


def deviation_result(
    s: np.ndarray, prior: GaussianPrior, k_percent: float, sign_mode: str
) -> DeviationResult:
    """Convenience bundle: deviation map, Top-K bag, and bag mean."""
    scores = deviation_map(s, prior, sign_mode)
    selected = topk_select(scores, k_percent)
    return DeviationResult(
        scores=scores,
        selected=selected,
        image_score=aggregate_topk(scores, selected),
        sign_mode=sign_mode,
    )
