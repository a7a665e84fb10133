"""Training objectives for LDU models.

The combined objective is ``task + lam * (entrop + dis + unc)``. The uncertainty
loss regresses the uncertainty head onto per-sample task losses, min-max
normalized over the mini-batch and treated as constant targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layer import PrototypeBank
from .tensor import ShapeError, Tensor, tensor

BCE_CLAMP = 1e-7
DEGENERATE_RANGE = 1e-12


@dataclass
class LossBreakdown:
    task: Tensor
    dis: Tensor
    entrop: Tensor
    unc: Tensor
    total: Tensor
    lam: float

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("task", "dis", "entrop", "unc", "total")}


def cross_entropy(logits, labels) -> tuple[Tensor, Tensor]:
    """Per-sample ``-log softmax(logits)[label]`` and its batch mean."""
    logits = tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"cross_entropy: labels must lie in [0, {logits.shape[1]})")
    per_sample = -logits.log_softmax_rows().pick(labels.astype(np.intp))
    return per_sample, per_sample.mean()


def regression_task_loss(pred, target) -> tuple[Tensor, Tensor]:
    pred = tensor(pred)
    target = tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"regression loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred - target
    per_sample = diff * diff
    return per_sample, per_sample.mean()


def loss_dis(bank: PrototypeBank) -> Tensor:
    """Negative sum of pairwise Euclidean distances between prototypes."""
    p = bank.prototypes
    m = bank.m
    if m < 2:
        return p.sum() * 0.0
    i, j = np.triu_indices(m, k=1)
    return -(p.take_rows(i) - p.take_rows(j)).l2_norm_rows().sum()


def loss_entrop(dm_scores) -> Tensor:
    """Batch mean of ``sum_i s_i log s_i`` with ``s = softmax(dm_scores)``."""
    s = tensor(dm_scores)
    log_s = s.log_softmax_rows()
    return (log_s.exp() * log_s).sum(axis=1).mean()


def normalize_batch_losses(per_sample) -> np.ndarray:
    """Min-max map per-sample losses onto ``[0, 1]``; a flat batch maps to zeros."""
    values = per_sample.data if isinstance(per_sample, Tensor) else np.asarray(per_sample, dtype=np.float64)
    values = values.reshape(-1)
    if values.size == 0:
        raise ValueError("normalize_batch_losses needs at least one value")
    lo, hi = values.min(), values.max()
    if hi - lo < DEGENERATE_RANGE:
        return np.zeros_like(values)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def loss_unc(unc_prob, targets) -> Tensor:
    """Binary cross entropy with soft targets; probabilities clamped to ``[1e-7, 1 - 1e-7]``."""
    p = tensor(unc_prob).clip(BCE_CLAMP, 1.0 - BCE_CLAMP)
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"loss_unc: probabilities {p.shape} vs targets {t.shape}")
    return -(p.log() * t + (1.0 - p).log() * (1.0 - t)).mean()


def total_loss(task, dis, entrop, unc, lam: float) -> LossBreakdown:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    task, dis, entrop, unc = (tensor(v) for v in (task, dis, entrop, unc))
    total = task + (entrop + dis + unc) * float(lam)
    return LossBreakdown(task, dis, entrop, unc, total, float(lam))


def ldu_losses(model, x, y, lam: float, use_dis=True, use_entrop=True, use_unc=True,
               unc_targets=None) -> LossBreakdown:
    """Full objective for one batch.

    Disabled auxiliary terms enter as exact zeros. ``unc_targets`` overrides the
    normalized task losses, which lets gradient checks hold the targets fixed.
    """
    if getattr(model, "bank", None) is None:
        out = model.forward(x)
        task_ps, task = _task_loss(model.task, out.logits, y)
        zero = Tensor(0.0)
        return total_loss(task, zero, zero, zero, lam)

    out, scores = model.forward_with_scores(x)
    task_ps, task = _task_loss(model.task, out.logits, y)
    zero = Tensor(0.0)
    dis = loss_dis(model.bank) if use_dis else zero
    entrop = loss_entrop(scores) if use_entrop else zero
    if use_unc:
        targets = normalize_batch_losses(task_ps) if unc_targets is None else np.asarray(unc_targets)
        unc = loss_unc(out.unc_logit.reshape((-1,)).sigmoid(), targets)
    else:
        unc = zero
    return total_loss(task, dis, entrop, unc, lam)


def _task_loss(task: str, logits: Tensor, y) -> tuple[Tensor, Tensor]:
    if task == "classification":
        return cross_entropy(logits, np.asarray(y, dtype=np.intp))
    return regression_task_loss(logits.reshape((-1,)), np.asarray(y, dtype=np.float64).reshape(-1))
