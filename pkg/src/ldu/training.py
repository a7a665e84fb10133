"""Optimizers and the two training stages.

Stage 1 minimizes the full objective over shuffled mini-batches. The optional
stage 2 freezes everything except the uncertainty head and fits it on a 1:1
mix of inliers (normalized task-loss targets) and noise-synthesized outliers
(fixed target, 1.0 by default).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import Dataset
from .layer import renormalize_prototypes
from .losses import ldu_losses, loss_unc, normalize_batch_losses, _task_loss
from .model import ModelSpec, PlainMLP, build_model
from .tensor import NonFiniteError, Tensor, no_grad

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "task", "dis", "entrop", "unc", "total", "accuracy")


class DivergenceError(RuntimeError):
    pass


@dataclass
class LossToggles:
    dis: bool = True
    entrop: bool = True
    unc: bool = True


@dataclass
class Stage2Config:
    noise_scale: float = 2.0
    steps: int = 5000
    outlier_target: float = 1.0
    batch_size: int = 256
    learning_rate: float = 0.3
    replay_inliers: bool = True
    inlier_normalization: str = "dataset"  # dataset | batch


@dataclass
class TrainConfig:
    lam: float = 0.1
    epochs: int = 200
    batch_size: int = 64
    optimizer: str = "adam"  # adam | sgd_momentum
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    momentum: float = 0.9
    seed: int = 0
    losses: LossToggles = field(default_factory=LossToggles)
    grad_clip: float | None = None
    lr_decay_epochs: list[int] = field(default_factory=list)
    lr_decay_factor: float = 0.1
    stage2: Stage2Config | None = None

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    task: float
    dis: float
    entrop: float
    unc: float
    total: float
    accuracy: float | None = None


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch, *(repr(getattr(r, k)) for k in HISTORY_COLUMNS[1:6]),
                            "" if r.accuracy is None else repr(r.accuracy)])
        return path


# -- optimizers --------------------------------------------------------------

class SGDMomentum:
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: list[np.ndarray | None] = [None] * len(self.params)

    def step(self) -> None:
        for i, p in enumerate(self.params):
            g = _grad_of(p)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            buf = self.buffers[i]
            buf = g.copy() if buf is None else self.momentum * buf + g
            self.buffers[i] = buf
            p.data -= self.lr * buf


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = _grad_of(p)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            p.data -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def _grad_of(p: Tensor) -> np.ndarray:
    return np.zeros_like(p.data) if p.grad is None else p.grad


def make_optimizer(params: Sequence[Tensor], cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate, weight_decay=cfg.weight_decay)
    return SGDMomentum(params, cfg.learning_rate, cfg.momentum, cfg.weight_decay)


def optimizer_step(optimizer, named_params, bank=None, grad_clip: float | None = None) -> None:
    """Check gradients, optionally clip by global norm, step, then renormalize prototypes."""
    for name, p in named_params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient in parameter {name}")
    if grad_clip is not None:
        total = math.sqrt(sum(float((p.grad ** 2).sum()) for _, p in named_params if p.grad is not None))
        if total > grad_clip:
            scale = grad_clip / total
            for _, p in named_params:
                if p.grad is not None:
                    p.grad = p.grad * scale
    optimizer.step()
    if bank is not None and bank.unit_norm:
        renormalize_prototypes(bank)


# -- stage 1 -----------------------------------------------------------------

def train_stage1(model, data: Dataset, cfg: TrainConfig, val: Dataset | None = None) -> TrainHistory:
    """Minimize the combined objective over ``cfg.epochs`` shuffled passes."""
    cfg.validate()
    if len(data) == 0:
        raise ValueError("training set is empty")
    named = model.named_parameters()
    opt = make_optimizer([p for _, p in named], cfg)
    rng = np.random.default_rng([cfg.seed, 11])
    x_all, y_all = data.inputs, data.targets
    n = len(data)
    history = TrainHistory()
    toggles = cfg.losses
    bank = getattr(model, "bank", None)
    for epoch in range(cfg.epochs):
        if epoch in cfg.lr_decay_epochs:
            opt.lr *= cfg.lr_decay_factor
        perm = rng.permutation(n)
        sums = np.zeros(5)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            model.zero_grad()
            br = ldu_losses(model, x_all[idx], y_all[idx], cfg.lam,
                            use_dis=toggles.dis, use_entrop=toggles.entrop, use_unc=toggles.unc)
            total = br.total.item()
            if not math.isfinite(total):
                raise DivergenceError(f"total loss became non-finite at epoch {epoch}")
            br.total.backward()
            optimizer_step(opt, named, bank, cfg.grad_clip)
            sums += [br.task.item(), br.dis.item(), br.entrop.item(), br.unc.item(), total]
            batches += 1
        means = sums / batches
        acc = evaluate_accuracy(model, val if val is not None else data)
        history.records.append(EpochRecord(epoch, *means.tolist(), accuracy=acc))
    return history


def evaluate_accuracy(model, data: Dataset) -> float | None:
    if model.task != "classification":
        return None
    with no_grad():
        logits = model.forward(data.inputs).logits.data
    return float(np.mean(logits.argmax(axis=1) == data.targets.astype(np.intp)))


# -- stage 2 -----------------------------------------------------------------

def synthesize_outliers(data: Dataset, noise_scale: float, seed: int) -> Dataset:
    """Copy of ``data`` with isotropic Gaussian noise of std ``noise_scale`` added, tagged OOD."""
    if noise_scale <= 0:
        raise ValueError("noise_scale must be positive")
    rng = np.random.default_rng([seed, 23])
    noisy = data.inputs + noise_scale * rng.standard_normal(data.inputs.shape)
    return Dataset(noisy, data.targets.copy(), np.ones(len(data), dtype=bool), seed,
                   f"{data.descriptor}+outliers(sigma={noise_scale})")


def train_stage2_unc_only(model, inliers: Dataset, outliers: Dataset, cfg: TrainConfig) -> TrainHistory:
    """Fit only the uncertainty head; every other parameter stays bit-identical."""
    s2 = cfg.stage2 or Stage2Config()
    history = TrainHistory()
    if s2.steps <= 0:
        return history
    named = [("unc_head.weight", model.unc_head.weight), ("unc_head.bias", model.unc_head.bias)]
    opt = Adam([p for _, p in named], s2.learning_rate)
    rng = np.random.default_rng([cfg.seed, 29])

    # frozen features: embeddings and inlier task losses never change in stage 2
    with no_grad():
        in_out = model.forward(inliers.inputs)
        in_emb = in_out.embedding.data
        in_losses = _task_loss(model.task, in_out.logits, inliers.targets)[0].data
        out_emb = model.forward(outliers.inputs).embedding.data

    if s2.inlier_normalization not in ("dataset", "batch"):
        raise ValueError(f"unknown inlier normalization {s2.inlier_normalization!r}")
    # with frozen features the whole-set min/max is fixed; a near-perfect
    # classifier has an almost flat loss profile, which per-batch min-max
    # would stretch into noise
    in_targets = normalize_batch_losses(in_losses) if s2.inlier_normalization == "dataset" else None

    half = max(1, s2.batch_size // 2) if s2.replay_inliers else s2.batch_size
    steps_per_record = max(1, math.ceil(len(outliers) / half))
    acc_sum, acc_n = 0.0, 0
    for step in range(s2.steps):
        o_idx = rng.integers(0, len(outliers), half)
        emb = out_emb[o_idx]
        targets = np.full(half, float(s2.outlier_target))
        if s2.replay_inliers:
            i_idx = rng.integers(0, len(inliers), half)
            emb = np.concatenate([in_emb[i_idx], emb])
            t_in = in_targets[i_idx] if in_targets is not None else normalize_batch_losses(in_losses[i_idx])
            targets = np.concatenate([t_in, targets])
        opt.params[0].grad = None
        opt.params[1].grad = None
        prob = model.unc_head(Tensor(emb)).reshape((-1,)).sigmoid()
        loss = loss_unc(prob, targets)
        value = loss.item()
        if not math.isfinite(value):
            raise DivergenceError(f"stage-2 loss became non-finite at step {step}")
        loss.backward()
        optimizer_step(opt, named)
        acc_sum += value
        acc_n += 1
        if acc_n == steps_per_record or step == s2.steps - 1:
            u = acc_sum / acc_n
            history.records.append(EpochRecord(len(history), 0.0, 0.0, 0.0, u, u))
            acc_sum, acc_n = 0.0, 0
    return history


# -- baselines ---------------------------------------------------------------

def train_deep_ensemble(seeds: Sequence[int], data: Dataset, cfg: TrainConfig, spec: ModelSpec) -> list[PlainMLP]:
    """Independently seeded plain models trained on the task loss only."""
    if len(seeds) < 1:
        raise ValueError("ensemble needs at least one seed")
    members = []
    for s in seeds:
        member_spec = ModelSpec(**{**spec.__dict__, "kind": "mlp", "seed": int(s)})
        model = build_model(member_spec)
        member_cfg = TrainConfig(**{**cfg.__dict__, "seed": int(s), "stage2": None})
        train_stage1(model, data, member_cfg)
        members.append(model)
    return members
