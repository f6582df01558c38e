"""Training losses. Each returns ``(value, gradient w.r.t. the prediction)``.

Per-sample losses are averaged over the batch.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-7


def _clamp(p):
    q = np.clip(p, EPS, 1.0 - EPS)
    inside = (p > EPS) & (p < 1.0 - EPS)
    return q, inside


def focal_loss(pred, target, beta: float = 2.0, eta: float = 4.0):
    """Penalty-reduced focal loss over heatmaps shaped (batch, ...).

    Cells where the target equals 1 are keypoints; every other cell is
    down-weighted by ``(1 - target)**eta``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    p, inside = _clamp(pred)
    pos = target == 1.0
    w = (1.0 - target) ** eta
    lp, l1p = np.log(p), np.log(1.0 - p)
    terms = np.where(pos, (1.0 - p) ** beta * lp, w * p ** beta * l1p)
    n = pred.shape[0]
    value = -terms.sum() / n
    d_pos = -beta * (1.0 - p) ** (beta - 1) * lp + (1.0 - p) ** beta / p
    d_neg = w * (beta * p ** (beta - 1) * l1p - p ** beta / (1.0 - p))
    grad = -np.where(pos, d_pos, d_neg) * inside / n
    return float(value), grad.astype(pred.dtype)


def _check_mask(mask, n):
    counts = mask.reshape(n, -1).sum(1)
    if np.any(counts == 0):
        raise ValueError("every sample needs at least one user cell")
    return counts


def vran_b_loss(pred, target, mask, beta: float = 2.0):
    """Serving-BS loss on user cells only.

    Label entries contribute ``-(1-p)**beta * log p``; the other entries of a
    user cell contribute ``+p**beta``. Each sample is normalized by
    B times its number of user cells.
    """
    pred, target, mask = np.asarray(pred), np.asarray(target), np.asarray(mask, bool)
    if pred.shape != target.shape or pred.shape[:-1] != mask.shape:
        raise ValueError("shape mismatch between prediction, target and mask")
    n, n_bs = pred.shape[0], pred.shape[-1]
    counts = _check_mask(mask, n)
    p, inside = _clamp(pred)
    lab = target == 1.0
    m = mask[..., None]
    terms = np.where(lab, -(1.0 - p) ** beta * np.log(p), p ** beta) * m
    norm = (n_bs * counts).reshape((n,) + (1,) * (pred.ndim - 1))
    value = (terms / norm).sum() / n
    d = np.where(lab, beta * (1.0 - p) ** (beta - 1) * np.log(p) - (1.0 - p) ** beta / p,
                 beta * p ** (beta - 1))
    d = np.where(lab, d * inside, d)  # the p**beta branch is smooth on [0, 1]
    grad = d * m / norm / n
    return float(value), grad.astype(pred.dtype)


def vran_p_loss(pred, target, mask, beta: float = 2.0):
    """Mean of ``|target - pred|**beta`` over user cells."""
    pred, target, mask = np.asarray(pred), np.asarray(target), np.asarray(mask, bool)
    if pred.shape != target.shape:
        raise ValueError("shape mismatch between prediction and target")
    n = pred.shape[0]
    if pred.ndim == mask.ndim + 1:
        mask = mask[..., None]
    counts = _check_mask(mask, n)
    norm = counts.reshape((n,) + (1,) * (pred.ndim - 1))
    d = pred - target
    terms = np.abs(d) ** beta * mask
    value = (terms / norm).sum() / n
    grad = beta * np.abs(d) ** (beta - 1) * np.sign(d) * mask / norm / n
    return float(value), grad.astype(pred.dtype)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    n = logits.shape[0]
    z = logits - logits.max(1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(1, keepdims=True))
    value = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(value), (grad / n).astype(logits.dtype)
