"""Loss functions built from tape ops, so their gradients come for free."""

from __future__ import annotations

import numpy as np

from ..errors import InsufficientBatch, ShapeMismatch
from . import tensor as T
from .tensor import Tensor


def weighted_cross_entropy(logits: Tensor, targets, class_weights=None) -> Tensor:
    """``sum_i w[y_i] * nll_i / sum_i w[y_i]``; uniform weights give the plain mean."""
    targets = np.asarray(targets, dtype=np.int64)
    n, C = logits.shape
    if targets.shape != (n,):
        raise ShapeMismatch(f"targets {targets.shape} vs logits {logits.shape}")
    w = np.ones(C) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (C,) or np.any(w <= 0):
        raise ValueError("class weights must be positive, one per class")
    wt = w[targets].astype(logits.dtype)
    nll = -T.pick(T.log_softmax(logits, axis=1), targets)
    return (nll * wt).sum() * (1.0 / float(wt.sum()))


def mse_loss(y, y_hat: Tensor, reduction: str = "sum") -> Tensor:
    """Squared reconstruction error; ``reduction`` is ``"sum"`` or ``"mean"``."""
    y = T._wrap(y, y_hat)
    if y.shape != y_hat.shape:
        raise ShapeMismatch(f"mse {y.shape} vs {y_hat.shape}")
    d = y - y_hat
    sq = (d * d).sum()
    if reduction == "mean":
        return sq * (1.0 / float(d.size))
    if reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    return sq


def l2_normalize(z: Tensor, eps: float = 1e-12) -> Tensor:
    norm = ((z * z).sum(axis=1, keepdims=True) + eps) ** 0.5
    return z / norm


def nt_xent(z: Tensor, temperature: float = 0.5) -> Tensor:
    """Normalized-temperature cross-entropy over ``2B`` rows; row ``i`` and
    ``i + B`` are the positive pair, every other row is a negative."""
    n = z.shape[0]
    if n % 2:
        raise ShapeMismatch("nt_xent needs an even number of rows")
    B = n // 2
    if B < 2:
        raise InsufficientBatch("nt_xent needs at least two pairs to have negatives")
    zn = l2_normalize(z)
    sim = T.matmul(zn, zn.T) * (1.0 / temperature)
    mask = np.zeros((n, n), dtype=z.dtype)
    np.fill_diagonal(mask, -1e30)
    logits = sim + Tensor(mask)
    pos = np.concatenate([np.arange(B, n), np.arange(B)])
    lsm = T.log_softmax(logits, axis=1)
    return -T.pick(lsm, pos).mean()


def l1_penalty(h: Tensor) -> Tensor:
    """Mean over the batch of ``||h||_1``."""
    return T.abs_(h).sum() * (1.0 / float(h.shape[0]))
