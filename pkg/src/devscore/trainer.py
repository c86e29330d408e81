"""Deterministic full-batch gradient descent on the prompt deltas.

One-shot training data contains only normal images, so the real-data
objective is alignment plus the y=0 deviation term on the abnormal
channel. The optional pseudo-anomaly flag adds y=1 bags by mixing patch
embeddings toward the current abnormal prompt.

Channel and sign choices (documented here because the scoring statistic
leaves them open): the empirical prior is fit on the training images'
abnormal-channel similarities s_a, so the deviation is a z-score of
"how abnormal does this patch look" against what normal patches exhibit;
the training loss uses absolute z-scores (hp.train_sign_mode), which
avoids drift along loss-invariant mean-shift directions.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import devcore
from .devloss import Bag, LossBreakdown, total_loss_and_grads
from .embedstore import DatasetManifest
from .params import HyperParams, PromptPair
from .tensorfile import read_tensor, write_tensor

LEARNED_DIR = "learned"


class TrainingDivergedError(RuntimeError):
    """Raised when the loss turns non-finite; carries the partial report."""

    def __init__(self, message: str, report: "TrainReport"):
        super().__init__(message)
        self.report = report


@dataclass
class TrainReport:
    """Per-epoch loss breakdowns plus the final prior and deltas."""

    epochs: list[dict] = field(default_factory=list)
    final_prior: dict | None = None
    seed: int = 0
    wall_clock_sec: float = 0.0
    hyperparams: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "epochs": self.epochs,
            "final_prior": self.final_prior,
            "seed": self.seed,
            "wall_clock_sec": self.wall_clock_sec,
            "hyperparams": self.hyperparams,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def init_deltas(d: int, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Zero-initialized deltas; the seed is reserved for optional noise init."""
    if d < 1:
        raise ValueError(f"dim must be >= 1, got {d}")
    return np.zeros(d), np.zeros(d)


def _prior_dict(prior: devcore.GaussianPrior) -> dict:
    return {
        "mu": prior.mu,
        "sigma": prior.sigma,
        "mode": prior.mode,
        "sample_count": prior.sample_count,
        "seed": prior.seed,
        "clamped": prior.clamped,
    }


def _estimate_prior(train_sa: np.ndarray, hp: HyperParams) -> devcore.GaussianPrior:
    if hp.prior_mode == "reference":
        return devcore.estimate_prior(mode="reference", count=hp.reference_count, seed=hp.seed)
    return devcore.estimate_prior(train_sa, mode="empirical")


def _make_bags(train_embeddings: list[tuple[str, np.ndarray]], ea: np.ndarray,
               hp: HyperParams) -> list[Bag]:
    bags = [Bag(image_id=rid, embeddings=Z, label=0) for rid, Z in train_embeddings]
    if hp.pseudo_anomaly:
        a = hp.pseudo_alpha
        for rid, Z in train_embeddings:
            mixed = (1.0 - a) * Z + a * ea[None, :]
            mixed = mixed / np.linalg.norm(mixed, axis=1, keepdims=True)
            bags.append(Bag(image_id=f"{rid}#pseudo", embeddings=mixed, label=1))
    return bags


def fit(
    manifest: DatasetManifest, hp: HyperParams
) -> tuple[PromptPair, devcore.GaussianPrior, TrainReport]:
    """Refine the prompt deltas on the train split.

    Each epoch recomputes similarity maps with the current effective
    prompts, re-estimates the prior (empirical mode), evaluates the
    full-batch loss and gradients, and takes one descent step. Returns the
    refined prompts, the final prior (to be frozen for inference), and the
    per-epoch report. Deterministic: a pure function of the dataset bytes
    and the hyperparameters.
    """
    t0 = time.perf_counter()
    train = sorted(manifest.split_records("train"), key=lambda r: r.image_id)
    if not train:
        raise ValueError("train split is empty")
    bad = [r.image_id for r in train if r.label != 0]
    if bad:
        raise ValueError(f"train split contains anomalous labels: {bad}")

    d = manifest.embed_dim
    dn, da = init_deltas(d, hp.seed)
    prompts = PromptPair(manifest.prompt_normal, manifest.prompt_abnormal, dn, da)
    train_embeddings = [(r.image_id, r.embeddings.astype(np.float64)) for r in train]
    loss_hp = hp.with_(sign_mode=hp.train_sign_mode)
    report = TrainReport(seed=hp.seed, hyperparams=hp.to_dict())

    prior = None
    reference_prior = None
    if hp.prior_mode == "reference":
        reference_prior = _estimate_prior(np.empty(0), hp)

    for _ in range(hp.epochs):
        ea = prompts.effective_abnormal
        if reference_prior is not None:
            prior = reference_prior
        else:
            pooled_sa = np.concatenate([Z @ ea for _, Z in train_embeddings])
            prior = devcore.estimate_prior(pooled_sa, mode="empirical")
        bags = _make_bags(train_embeddings, ea, hp)
        try:
            bd: LossBreakdown = total_loss_and_grads(bags, prompts, prior, loss_hp)
        except FloatingPointError as exc:
            report.wall_clock_sec = time.perf_counter() - t0
            report.final_prior = _prior_dict(prior)
            raise TrainingDivergedError(
                f"training diverged after {len(report.epochs)} finite epochs: {exc}",
                report,
            ) from exc
        report.epochs.append(
            {"total": bd.total, "align": bd.align, "deviation": bd.deviation}
        )
        prompts.delta_normal -= hp.lr * bd.grad_delta_normal
        prompts.delta_abnormal -= hp.lr * bd.grad_delta_abnormal
        if hp.shared_delta:
            prompts.delta_shared -= hp.lr * (bd.grad_delta_normal + bd.grad_delta_abnormal)

    # final prior must match the final prompts
    if reference_prior is not None:
        prior = reference_prior
    else:
        ea = prompts.effective_abnormal
        pooled_sa = np.concatenate([Z @ ea for _, Z in train_embeddings])
        prior = devcore.estimate_prior(pooled_sa, mode="empirical")
    report.final_prior = _prior_dict(prior)
    report.wall_clock_sec = time.perf_counter() - t0
    return prompts, prior, report


def save_learned(dataset_dir: str | Path, prompts: PromptPair,
                 prior: devcore.GaussianPrior, report: TrainReport) -> Path:
    """Write refined prompts, prior, and report under ``<dataset>/learned/``."""
    out = Path(dataset_dir) / LEARNED_DIR
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "delta_normal.devt", prompts.delta_normal)
    write_tensor(out / "delta_abnormal.devt", prompts.delta_abnormal)
    write_tensor(out / "delta_shared.devt", prompts.delta_shared)
    write_tensor(out / "prompt_normal.devt", prompts.effective_normal)
    write_tensor(out / "prompt_abnormal.devt", prompts.effective_abnormal)
    (out / "prior.json").write_text(
        json.dumps(_prior_dict(prior), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    return out


def load_learned(dataset_dir: str | Path,
                 manifest: DatasetManifest) -> tuple[PromptPair, devcore.GaussianPrior]:
    """Load refined prompts and the frozen prior written by ``save_learned``."""
    out = Path(dataset_dir) / LEARNED_DIR
    if not out.is_dir():
        raise FileNotFoundError(f"no learned/ directory under {dataset_dir}; run fit first")
    prompts = PromptPair(
        manifest.prompt_normal,
        manifest.prompt_abnormal,
        read_tensor(out / "delta_normal.devt").astype(np.float64),
        read_tensor(out / "delta_abnormal.devt").astype(np.float64),
        read_tensor(out / "delta_shared.devt").astype(np.float64),
    )
    doc = json.loads((out / "prior.json").read_text(encoding="utf-8"))
    prior = devcore.GaussianPrior(
        mu=doc["mu"], sigma=doc["sigma"], mode=doc["mode"],
        sample_count=doc["sample_count"], seed=doc["seed"], clamped=doc["clamped"],
    )
    return prompts, prior
