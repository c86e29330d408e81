"""Alignment and deviation losses with analytic gradients w.r.t. prompt deltas.

The chain rule passes through the prompt renormalization
``e_hat = (e0 + delta) / ||e0 + delta||`` and, for the deviation term,
through only the Top-K patches selected for each bag (selection is
treated as constant within a step). No gradient flows through the prior's
(mu, sigma). Bags are reduced in the order given, so callers that sort by
image id get a fixed, reproducible reduction order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .devcore import GaussianPrior, aggregate_topk, deviation_map, topk_select
from .params import HyperParams, PromptPair


@dataclass(frozen=True)
class Bag:
    """One training instance: an image's patch embeddings plus its label."""

    image_id: str
    embeddings: np.ndarray  # (P, d), unit-norm rows
    label: int              # 0 normal, 1 anomalous


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    align: float
    deviation: float                 # unweighted; total = align + dev_weight * deviation
    per_image: dict[str, float]      # image id -> Top-K bag mean D
    grad_delta_normal: np.ndarray
    grad_delta_abnormal: np.ndarray


def deviation_loss(D: float, y: int, a: float, dev_weight: float) -> float:
    """Weighted per-image deviation loss.

    ``dev_weight * ((1 - y) * |D| + y * max(0, a - D))``: normal bags are
    pushed to zero deviation, anomalous bags past the margin ``a``. The
    weight is applied exactly once.
    """
    if a <= 0 or dev_weight < 0:
        raise ValueError("need a > 0 and dev_weight >= 0")
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    return dev_weight * ((1 - y) * abs(D) + y * max(0.0, a - D))


def _softplus(t: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, t)


def _logistic(t: np.ndarray) -> np.ndarray:
    # stable for large |t|
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def alignment_loss(s_n: np.ndarray, s_a: np.ndarray, tau: float) -> float:
    """Mean binary contrastive loss pushing s_n above s_a per patch.

    Equals mean_p -log(exp(s_n/tau) / (exp(s_n/tau) + exp(s_a/tau))),
    computed via log-sum-exp as softplus((s_a - s_n)/tau).
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    t = (np.asarray(s_a, dtype=np.float64) - np.asarray(s_n, dtype=np.float64)) / tau
    return float(np.mean(_softplus(t)))


def total_loss_and_grads(
    bags: list[Bag],
    prompts: PromptPair,
    prior: GaussianPrior,
    hp: HyperParams,
) -> LossBreakdown:
    """Full-batch loss and exact gradients w.r.t. delta_normal / delta_abnormal.

    The deviation term runs on the abnormal channel s_a with hp.sign_mode;
    alignment touches both channels. Gradients are means over bags.
    """
    if not bags:
        raise ValueError("need at least one bag")
    d = prompts.dim
    vn = prompts.vector_normal
    va = prompts.vector_abnormal
    norm_n = float(np.linalg.norm(vn))
    norm_a = float(np.linalg.norm(va))
    en = vn / norm_n
    ea = va / norm_a

    align_sum = 0.0
    dev_sum = 0.0
    g_emb_n = np.zeros(d)  # sum over bags of Z^T dL/ds_n (pre-Jacobian)
    g_emb_a = np.zeros(d)
    per_image: dict[str, float] = {}

    for bag in bags:
        Z = bag.embeddings.astype(np.float64)
        if Z.ndim != 2 or Z.shape[1] != d:
            raise ValueError(f"{bag.image_id}: embeddings shape {Z.shape} != (P, {d})")
        P = Z.shape[0]
        s_n = Z @ en
        s_a = Z @ ea
        t = (s_a - s_n) / hp.tau
        align_i = float(np.mean(_softplus(t)))
        w = _logistic(t) / (hp.tau * P)  # d align_i / d s_a; d/d s_n is -w

        dev = deviation_map(s_a, prior, hp.sign_mode)
        selected = topk_select(dev, hp.k_percent)
        D = aggregate_topk(dev, selected)
        y = bag.label
        dev_i = (1 - y) * abs(D) + y * max(0.0, hp.margin - D)
        dL_dD = (1 - y) * float(np.sign(D)) + y * (-1.0 if D < hp.margin else 0.0)
        if hp.sign_mode == "absolute":
            d_dev_ds = np.sign(s_a[selected] - prior.mu) / prior.sigma
        else:
            d_dev_ds = np.full(selected.size, 1.0 / prior.sigma)
        g_sa = w.copy()
        g_sa[selected] += hp.dev_weight * dL_dD * d_dev_ds / selected.size
        g_sn = -w

        if not (np.isfinite(align_i) and np.isfinite(dev_i)):
            raise FloatingPointError(f"non-finite loss for image {bag.image_id}")

        g_emb_n += Z.T @ g_sn
        g_emb_a += Z.T @ g_sa
        align_sum += align_i
        dev_sum += dev_i
        per_image[bag.image_id] = D

    B = len(bags)
    align = align_sum / B
    deviation = dev_sum / B
    total = align + hp.dev_weight * deviation
    # Jacobian of v / ||v||: (I - e e^T) / ||v||
    grad_n = (g_emb_n - en * float(en @ g_emb_n)) / (norm_n * B)
    grad_a = (g_emb_a - ea * float(ea @ g_emb_a)) / (norm_a * B)
    if not (np.isfinite(grad_n).all() and np.isfinite(grad_a).all()):
        raise FloatingPointError("non-finite gradient")
    return LossBreakdown(
        total=total,
        align=align,
        deviation=deviation,
        per_image=per_image,
        grad_delta_normal=grad_n,
        grad_delta_abnormal=grad_a,
    )


def delta_loss_fn(bags, base_prompts: PromptPair, prior, hp):
    """Loss as a function of the concatenated (delta_n, delta_a) vector.

    Returns (fn, x0, analytic_grad_at_x0); handy for gradient checking.
    """
    d = base_prompts.dim

    def fn(x: np.ndarray) -> float:
        p = PromptPair(
            base_prompts.base_normal,
            base_prompts.base_abnormal,
            x[:d],
            x[d:],
            base_prompts.delta_shared,
        )
        return total_loss_and_grads(bags, p, prior, hp).total

    x0 = np.concatenate([base_prompts.delta_normal, base_prompts.delta_abnormal])
    bd = total_loss_and_grads(bags, base_prompts, prior, hp)
    grad0 = np.concatenate([bd.grad_delta_normal, bd.grad_delta_abnormal])
    return fn, x0, grad0


def finite_difference_check(fn, x0: np.ndarray, analytic: np.ndarray, h: float = 1e-4) -> float:
    """Max relative error between ``analytic`` and central differences of ``fn``.

    Relative error per coordinate is |analytic - fd| / max(1e-8, |analytic|).
    Very small ``h`` degrades the estimate through cancellation; that is
    expected floating-point behavior, not a defect.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    worst = 0.0
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = fn(xp), fn(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite evaluation at coordinate {i}")
        fd = (fp - fm) / (2.0 * h)
        err = abs(analytic[i] - fd) / max(1e-8, abs(analytic[i]))
        worst = max(worst, err)
    return worst
