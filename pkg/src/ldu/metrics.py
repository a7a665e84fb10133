"""Accuracy, calibration, OOD-detection and sparsification metrics.

For AUROC, AUPR and FPR@95%TPR the positive class is OOD and a higher score
means "more uncertain". Metric reports serialize to CSV with the column order
in ``METRIC_COLUMNS``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

METRIC_COLUMNS = (
    "run", "seed", "accuracy", "ece", "auroc", "aupr", "fpr_at_95_tpr",
    "ause_rmse", "ause_absrel", "n_id", "n_ood",
)


def accuracy(pred_labels, true_labels) -> float:
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError(f"accuracy needs equal non-empty label vectors, got {pred.shape} and {true.shape}")
    return float(np.mean(pred == true))


def ece(confidences, correct, bins: int = 15) -> float:
    """Confidence ECE over ``bins`` equal-width, right-inclusive bins of ``[0, 1]``.

    A confidence of exactly 0 falls in the first bin.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    hit = np.asarray(correct, dtype=np.float64)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if conf.shape != hit.shape or conf.size == 0:
        raise ValueError("confidences and correctness flags must be equal-length and non-empty")
    if np.any((conf < 0) | (conf > 1)) or not np.all(np.isfinite(conf)):
        raise ValueError("confidences must lie in [0, 1]")
    edges = np.arange(bins + 1) / bins  # exact k / bins, so edge values land right-inclusively
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    hit_sum = np.bincount(idx, weights=hit, minlength=bins)
    nz = counts > 0
    gaps = np.abs(hit_sum[nz] - conf_sum[nz]) / counts[nz]
    return float(np.sum(counts[nz] / conf.size * gaps))


def _split(scores_pos, scores_neg) -> tuple[np.ndarray, np.ndarray]:
    pos = np.asarray(scores_pos, dtype=np.float64).reshape(-1)
    neg = np.asarray(scores_neg, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both positive (OOD) and negative (ID) scores are required")
    return pos, neg


def _sweep(pos: np.ndarray, neg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative (tp, fp) counts at each distinct threshold, highest score first."""
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    last_of_group = np.r_[np.nonzero(np.diff(scores))[0], scores.size - 1]
    tp = np.cumsum(labels)[last_of_group]
    fp = (last_of_group + 1) - tp
    return tp, fp


def auroc(scores_pos, scores_neg) -> float:
    """Area under the ROC curve; ties earn half credit (Mann-Whitney)."""
    pos, neg = _split(scores_pos, scores_neg)
    tp, fp = _sweep(pos, neg)
    tpr = np.r_[0.0, tp / pos.size]
    fpr = np.r_[0.0, fp / neg.size]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def aupr(scores_pos, scores_neg) -> float:
    """Average precision with OOD as positives (step interpolation)."""
    pos, neg = _split(scores_pos, scores_neg)
    tp, fp = _sweep(pos, neg)
    precision = tp / (tp + fp)
    recall = np.r_[0.0, tp / pos.size]
    return float(np.sum(np.diff(recall) * precision))


def fpr_at_95_tpr(scores_pos, scores_neg) -> float:
    """Smallest false-positive rate over thresholds reaching TPR >= 0.95."""
    pos, neg = _split(scores_pos, scores_neg)
    tp, fp = _sweep(pos, neg)
    # integer comparison avoids rounding at tp/n == 0.95
    ok = tp * 100 >= 95 * pos.size
    return float(fp[ok].min() / neg.size)


def sparsification_curves(errors, uncertainties, kind: str = "rmse", steps: int = 100, targets=None):
    """Sparsification and oracle curves, both normalized by the full-set error.

    Fraction ``t_i = i / steps`` of the samples with the highest uncertainty
    (resp. highest true error) is removed before recomputing the metric.
    Uncertainty ties are broken by sample order.
    """
    err = np.abs(np.asarray(errors, dtype=np.float64).reshape(-1))
    unc = np.asarray(uncertainties, dtype=np.float64).reshape(-1)
    if err.shape != unc.shape or err.size == 0:
        raise ValueError("errors and uncertainties must be equal-length and non-empty")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if kind == "rmse":
        per = err ** 2
    elif kind == "absrel":
        if targets is None:
            raise ValueError("absrel needs ground-truth targets")
        gt = np.abs(np.asarray(targets, dtype=np.float64).reshape(-1))
        if gt.shape != err.shape or np.any(gt == 0):
            raise ValueError("absrel targets must match errors and be non-zero")
        per = err / gt
    else:
        raise ValueError(f"unknown error kind {kind!r}")

    n = err.size
    by_unc = per[np.argsort(-unc, kind="stable")]
    by_err = np.sort(per)[::-1]
    # suffix sums: mean of the kept tail after removing the first k entries
    tail_unc = np.cumsum(by_unc[::-1])[::-1]
    tail_err = np.cumsum(by_err[::-1])[::-1]
    removed = (np.arange(steps) * n) // steps
    kept = n - removed
    curve = tail_unc[removed] / kept
    oracle = tail_err[removed] / kept
    if kind == "rmse":
        curve, oracle = np.sqrt(curve), np.sqrt(oracle)
    fractions = np.arange(steps) / steps
    base = curve[0]
    if base == 0:
        return fractions, np.zeros(steps), np.zeros(steps)
    return fractions, curve / base, oracle / base


def ause(errors, uncertainties, kind: str = "rmse", steps: int = 100, targets=None) -> float:
    """Mean gap between the uncertainty-ranked and oracle sparsification curves."""
    _, curve, oracle = sparsification_curves(errors, uncertainties, kind, steps, targets)
    return float(np.mean(curve - oracle))


@dataclass
class MetricReport:
    run: str = ""
    seed: str = ""
    accuracy: float | None = None
    ece: float | None = None
    auroc: float | None = None
    aupr: float | None = None
    fpr_at_95_tpr: float | None = None
    ause_rmse: float | None = None
    ause_absrel: float | None = None
    n_id: int = 0
    n_ood: int = 0

    def row(self) -> list[str]:
        out = []
        for name in METRIC_COLUMNS:
            v = getattr(self, name)
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        return out


def mean_report(reports: Sequence[MetricReport], run: str = "", seed: str = "mean") -> MetricReport:
    """Seed average; a metric missing from any report stays missing."""
    if not reports:
        raise ValueError("no reports to average")
    out = MetricReport(run=run or reports[0].run, seed=seed)
    for f in fields(MetricReport):
        if f.name in ("run", "seed"):
            continue
        vals = [getattr(r, f.name) for r in reports]
        if any(v is None for v in vals):
            continue
        if f.name in ("n_id", "n_ood"):
            setattr(out, f.name, int(round(sum(vals) / len(vals))))
        else:
            setattr(out, f.name, float(math.fsum(vals) / len(vals)))
    return out


def write_metrics_csv(reports: Sequence[MetricReport], path, extra_columns: Sequence[str] = (),
                      extra_values: Sequence[Sequence[str]] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*extra_columns, *METRIC_COLUMNS])
        for i, r in enumerate(reports):
            prefix = list(extra_values[i]) if extra_values is not None else []
            w.writerow([*prefix, *r.row()])
    return path


def read_metrics_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
