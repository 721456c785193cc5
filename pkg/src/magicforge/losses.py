"""Focal, dice and counterfactual cosine losses with analytic gradients.

All mask losses take post-sigmoid probabilities of shape (m, H, W) and return
``(value, d value / d pred)``. Probabilities are clamped to [EPS, 1 - EPS]
before use; gradients are evaluated at the clamped point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    w1: float = 100.0
    w2: float = 1.0
    w3: float = 1.0
    alpha: float = 2.0

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3, self.alpha) < 0:
            raise ValueError(f"loss weights must be non-negative: {self}")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(self.w1 * factor, self.w2 * factor, self.w3 * factor, self.alpha)


def _check(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def focal_loss(pred, gt, alpha: float = 2.0) -> tuple[float, np.ndarray]:
    pred, gt = _check(pred, gt)
    if not np.isin(gt, (0.0, 1.0)).all():
        raise ValueError("ground truth must be binary")
    p = np.clip(pred, EPS, 1 - EPS)
    q = 1 - p
    log_p, log_q = np.log(p), np.log(q)
    scale = -1.0 / p.size
    pos = q ** alpha * log_p
    neg = p ** alpha * log_q
    value = scale * np.sum(gt * pos + (1 - gt) * neg)
    # d/dp [q^a log p] = -a q^(a-1) log p + q^a / p ;  d/dp [p^a log q] = a p^(a-1) log q - p^a / q
    d_pos = -alpha * q ** (alpha - 1) * log_p + q ** alpha / p
    d_neg = alpha * p ** (alpha - 1) * log_q - p ** alpha / q
    grad = scale * (gt * d_pos + (1 - gt) * d_neg)
    return float(value), grad


def dice_loss(pred, gt) -> tuple[float, np.ndarray]:
    """Mean over planes of ``1 - 2 sum(p y) / (sum(p^2) + sum(y^2))``.

    A plane whose denominator is zero contributes 0 loss and 0 gradient.
    """
    pred, gt = _check(pred, gt)
    if pred.ndim < 1 or pred.shape[0] == 0:
        raise ValueError("need at least one category plane")
    m = pred.shape[0]
    p = pred.reshape(m, -1)
    y = gt.reshape(m, -1)
    inter = np.sum(p * y, axis=1)
    denom = np.sum(p * p, axis=1) + np.sum(y * y, axis=1)
    live = denom > 0
    safe = np.where(live, denom, 1.0)
    per_plane = np.where(live, 1 - 2 * inter / safe, 0.0)
    grad = (-2 * y / safe[:, None] + 4 * inter[:, None] * p / (safe * safe)[:, None]) / m
    grad[~live] = 0.0
    return float(per_plane.mean()), grad.reshape(pred.shape)


def counterfactual_cosine_loss(p_cls, p_co) -> tuple[float, np.ndarray, np.ndarray]:
    """Hinged cosine similarity ``max(0, cos(p_cls, p_co))`` and its gradients."""
    a = np.asarray(p_cls, dtype=np.float64)
    b = np.asarray(p_co, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine loss is undefined for a zero vector")
    cos = float(a @ b / (na * nb))
    if cos <= 0:
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    ga = b / (na * nb) - cos * a / (na * na)
    gb = a / (na * nb) - cos * b / (nb * nb)
    return cos, ga, gb


@dataclass(frozen=True)
class LossTerms:
    focal: float
    dice: float
    cos: float
    total: float
    d_pred: np.ndarray
    d_cls: np.ndarray
    d_co: np.ndarray


def total_loss(pred, gt, p_cls, p_co, weights: LossWeights = LossWeights()) -> LossTerms:
    f, gf = focal_loss(pred, gt, weights.alpha)
    d, gd = dice_loss(pred, gt)
    c, ga, gb = counterfactual_cosine_loss(p_cls, p_co)
    total = weights.w1 * f + weights.w2 * d + weights.w3 * c
    return LossTerms(f, d, c, total, weights.w1 * gf + weights.w2 * gd, weights.w3 * ga, weights.w3 * gb)


def bce(pred, gt) -> float:
    """Plain mean binary cross-entropy, kept separate from the focal path as a reference."""
    p = np.clip(np.asarray(pred, dtype=np.float64), EPS, 1 - EPS)
    y = np.asarray(gt, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))
