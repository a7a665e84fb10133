"""Config-driven experiment runner and sweep harness.

Per seed ``s`` the training set uses seed ``s``, the ID test set seed
``s + TEST_SEED_OFFSET`` and the OOD set seed ``s``; the model and the
optimizer are seeded with ``s`` as well (``model.seed`` and ``train.seed``
from the config are overridden).

Artifacts under ``<out>/seed_<s>/``: ``checkpoint.json``, ``history.csv``,
``history_stage2.csv`` (when stage 2 runs), ``train.csv``, ``projection.csv``
(classification), ``grid.csv`` (2-D inputs), ``metrics.csv`` and the SVG
plots. ``<out>/metrics.csv`` holds one row per seed plus a ``mean`` row.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import datasets as ds
from .analysis import CollapseReport, collapse_report, lattice
from .config import ExperimentSpec, dump_config
from .datasets import Dataset
from .metrics import (MetricReport, accuracy, aupr, auroc, ause, ece, fpr_at_95_tpr, mean_report,
                      write_metrics_csv)
from .model import aleatoric_score, build_model, epistemic_score, predict, save_checkpoint, softmax
from .training import LossToggles, TrainHistory, synthesize_outliers, train_stage1, train_stage2_unc_only

log = logging.getLogger(__name__)

TEST_SEED_OFFSET = 1000
LAMBDA_GRID = (0.01, 0.1, 0.5, 1.0, 2.0)
PROTOTYPE_GRID = (16, 32, 64, 128)
LOSS_GRID = {
    "unc": LossToggles(dis=False, entrop=False, unc=True),
    "unc+entrop": LossToggles(dis=False, entrop=True, unc=True),
    "unc+dis": LossToggles(dis=True, entrop=False, unc=True),
    "unc+entrop+dis": LossToggles(dis=True, entrop=True, unc=True),
    "none": LossToggles(dis=False, entrop=False, unc=False),
}
SWEEP_AXES = ("lambda", "prototypes", "losses")
SWEEP_COLUMNS = ("axis", "value", "status")


@dataclass
class SeedResult:
    seed: int
    model: object
    report: MetricReport
    history: TrainHistory
    stage2_history: TrainHistory | None
    train: Dataset
    test: Dataset
    ood: Dataset | None
    collapse: CollapseReport | None = None
    grid: dict | None = None


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    seeds: list[SeedResult] = field(default_factory=list)
    mean: MetricReport | None = None
    out_dir: Path | None = None


# -- data --------------------------------------------------------------------

def make_data(spec: ExperimentSpec, seed: int) -> tuple[Dataset, Dataset, Dataset | None]:
    d = spec.dataset
    test_seed = seed + TEST_SEED_OFFSET
    means = None
    if d.kind == "two_moons":
        train = ds.two_moons(d.n_train, d.noise, seed)
        test = ds.two_moons(d.n_test, d.noise, test_seed)
    elif d.kind == "blobs":
        means = ds.blob_means(d.classes, d.dim, d.spread, seed)
        train = ds.gaussian_blobs(d.classes, d.n_train // d.classes, d.dim, d.spread, seed, means=means)
        test = ds.gaussian_blobs(d.classes, d.n_test // d.classes, d.dim, d.spread, test_seed, means=means)
    else:
        train = ds.sinusoid_regression(d.n_train, tuple(d.x_range), d.noise_mode, seed, d.noise_level)
        test = ds.sinusoid_regression(d.n_test, tuple(d.x_range), d.noise_mode, test_seed, d.noise_level)

    o = spec.evaluation.ood
    if o.kind == "ring":
        ood = ds.ood_ring(o.n, tuple(o.center), o.inner_radius, o.outer_radius, seed)
        if ood.dim != train.dim:
            raise ValueError(f"ring OOD set is 2-D but the dataset has {train.dim} input dimensions")
    elif o.kind == "shifted_blobs":
        per_blob = max(1, o.n // d.classes)
        ood = ds.shifted_blobs(means, per_blob, d.spread, seed)
    else:
        ood = None
    return train, test, ood


def with_seed(spec: ExperimentSpec, seed: int) -> ExperimentSpec:
    out = copy.deepcopy(spec)
    out.model.seed = int(seed)
    out.train.seed = int(seed)
    return out


# -- train / evaluate --------------------------------------------------------

def train_model(spec: ExperimentSpec, train: Dataset):
    """Stage 1, then stage 2 when configured (LDU models only)."""
    model = build_model(copy.deepcopy(spec.model))
    history = train_stage1(model, train, spec.train)
    stage2 = None
    if spec.train.stage2 is not None and spec.model.kind == "ldu":
        outliers = synthesize_outliers(train, spec.train.stage2.noise_scale, spec.train.seed)
        stage2 = train_stage2_unc_only(model, train, outliers, spec.train)
    return model, history, stage2


def ood_scores(model, out, spec: ExperimentSpec) -> np.ndarray:
    mode = spec.evaluation.ood_score
    if mode == "auto":
        mode = "epistemic" if getattr(model, "bank", None) is not None else "aleatoric"
    if mode == "aleatoric":
        return aleatoric_score(out, model.task)
    if mode == "max_embed":
        return epistemic_score(out, "max_embed")
    return epistemic_score(out, "unc_head")


def regression_uncertainty(model, out) -> np.ndarray:
    """``sigmoid(g_unc)`` for LDU models; a plain model gets the constant-uncertainty baseline."""
    if out.unc_logit is None:
        return np.zeros(out.batch_size)
    return epistemic_score(out, "unc_head")


def evaluate(model, spec: ExperimentSpec, test: Dataset, ood: Dataset | None, seed: int) -> MetricReport:
    wanted = set(spec.evaluation.metrics)
    ev = spec.evaluation
    report = MetricReport(run=spec.name, seed=str(seed), n_id=len(test), n_ood=0 if ood is None else len(ood))
    out = predict(model, test.inputs)
    if model.task == "classification":
        probs = softmax(out.logits.data)
        pred = probs.argmax(axis=1)
        if "accuracy" in wanted:
            report.accuracy = accuracy(pred, test.targets)
        if "ece" in wanted:
            report.ece = ece(probs.max(axis=1), pred == test.targets, ev.ece_bins)
    else:
        err = out.logits.data.reshape(-1) - test.targets
        unc = regression_uncertainty(model, out)
        if "ause_rmse" in wanted:
            report.ause_rmse = ause(err, unc, "rmse", ev.ause_steps)
        if "ause_absrel" in wanted and np.all(test.targets != 0):
            report.ause_absrel = ause(err, unc, "absrel", ev.ause_steps, test.targets)
    if ood is not None:
        neg = ood_scores(model, out, spec)
        pos = ood_scores(model, predict(model, ood.inputs), spec)
        if "auroc" in wanted:
            report.auroc = auroc(pos, neg)
        if "aupr" in wanted:
            report.aupr = aupr(pos, neg)
        if "fpr_at_95_tpr" in wanted:
            report.fpr_at_95_tpr = fpr_at_95_tpr(pos, neg)
    return report


def grid_bounds(*sets: Dataset, pad: float = 0.1) -> tuple[tuple[float, float], tuple[float, float]]:
    x = np.vstack([s.inputs for s in sets if s is not None])
    lo, hi = x.min(axis=0), x.max(axis=0)
    margin = pad * (hi - lo)
    lo, hi = lo - margin, hi + margin
    return (float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))


def score_grid(model, bounds, resolution: int) -> dict:
    """Aleatoric and (LDU only) epistemic scores on a row-major lattice."""
    xs, ys, pts = lattice(bounds, resolution)
    out = predict(model, pts)
    grid = {"points": pts, "resolution": resolution, "aleatoric": aleatoric_score(out, model.task)}
    if out.unc_logit is not None:
        grid["epistemic"] = epistemic_score(out, "unc_head")
    return grid


def run_seed(spec: ExperimentSpec, seed: int, out_dir: Path | None = None) -> SeedResult:
    s_spec = with_seed(spec, seed)
    train, test, ood = make_data(s_spec, seed)
    model, history, stage2 = train_model(s_spec, train)
    report = evaluate(model, s_spec, test, ood, seed)
    result = SeedResult(seed, model, report, history, stage2, train, test, ood)
    if model.task == "classification":
        emb = predict(model, test.inputs).embedding.data
        result.collapse = collapse_report(emb, test.targets, f"{spec.model.kind}:{spec.name}")
    if train.dim == 2:
        result.grid = score_grid(model, grid_bounds(train, ood), s_spec.evaluation.grid_resolution)
    if out_dir is not None:
        write_seed_artifacts(result, s_spec, Path(out_dir))
    return result


def run_experiment(spec: ExperimentSpec, out_dir=None, seeds: Sequence[int] | None = None) -> ExperimentResult:
    """Run every seed, then write per-seed artifacts and the merged metrics CSV."""
    spec.validate()
    seeds = list(spec.seeds if seeds is None else seeds)
    out = Path(out_dir) if out_dir is not None else None
    result = ExperimentResult(spec, out_dir=out)
    for s in seeds:
        log.info("%s: seed %d", spec.name, s)
        seed_dir = out / f"seed_{s}" if out is not None else None
        result.seeds.append(run_seed(spec, s, seed_dir))
    reports = [r.report for r in result.seeds]
    result.mean = mean_report(reports, spec.name)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(dump_config(spec))
        write_metrics_csv([*reports, result.mean], out / "metrics.csv")
    return result


# -- artifacts ---------------------------------------------------------------

def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_seed_artifacts(result: SeedResult, spec: ExperimentSpec, out: Path) -> None:
    from .plots import emit_plots

    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out / "checkpoint.json")
    result.history.write_csv(out / "history.csv")
    if result.stage2_history is not None:
        result.stage2_history.write_csv(out / "history_stage2.csv")
    ds.write_csv(result.train, out / "train.csv")
    if result.collapse is not None:
        proj = result.collapse.projection
        _write_rows(out / "projection.csv", ("pc0", "pc1", "label"),
                    ([repr(float(a)), repr(float(b)), str(int(y))] for (a, b), y in zip(proj, result.test.targets)))
    if result.grid is not None:
        g = result.grid
        r = g["resolution"]
        cols = ["row", "col", "x", "y", "aleatoric"] + (["epistemic"] if "epistemic" in g else [])
        rows = []
        for k, (x, y) in enumerate(g["points"]):
            row = [str(k // r), str(k % r), repr(float(x)), repr(float(y)), repr(float(g["aleatoric"][k]))]
            if "epistemic" in g:
                row.append(repr(float(g["epistemic"][k])))
            rows.append(row)
        _write_rows(out / "grid.csv", cols, rows)
    write_metrics_csv([result.report], out / "metrics.csv")
    p = spec.plots
    if p.projection or p.grid or p.curves:
        emit_plots(out, projection=p.projection, grid=p.grid, curves=p.curves)


# -- sweeps ------------------------------------------------------------------

def sweep_points(axis: str, values: Sequence[str] | None = None) -> list[str]:
    if axis == "lambda":
        return [repr(float(v)) for v in (values or LAMBDA_GRID)]
    if axis == "prototypes":
        return [str(int(v)) for v in (values or PROTOTYPE_GRID)]
    if axis == "losses":
        pts = list(values) if values else [k for k in LOSS_GRID if k != "none"]
        unknown = [v for v in pts if v not in LOSS_GRID]
        if unknown:
            raise ValueError(f"unknown loss combination {unknown[0]!r}; choose from {sorted(LOSS_GRID)}")
        return pts
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def apply_point(spec: ExperimentSpec, axis: str, value: str) -> ExperimentSpec:
    out = copy.deepcopy(spec)
    if axis == "lambda":
        out.train.lam = float(value)
    elif axis == "prototypes":
        out.model.prototypes = int(value)
    else:
        out.train.losses = dataclasses.replace(LOSS_GRID[value])
    out.name = f"{spec.name}[{axis}={value}]"
    return out


def run_sweep(spec: ExperimentSpec, axis: str, values: Sequence[str] | None = None, out_dir=None,
              seeds: Sequence[int] | None = None) -> list[tuple[str, str, str, MetricReport]]:
    """One experiment per grid point; failures are logged and marked, the sweep continues.

    Returns ``(axis, value, status, report)`` rows: per seed, then the point mean.
    """
    points = sweep_points(axis, values)
    if not points:
        raise ValueError("sweep axis has no values")
    seeds = list(spec.seeds if seeds is None else seeds)
    out = Path(out_dir) if out_dir is not None else None
    rows = []
    for value in points:
        p_spec = apply_point(spec, axis, value)
        p_dir = out / f"{axis}={value}" if out is not None else None
        try:
            res = run_experiment(p_spec, p_dir, seeds)
            reports, status = [*[r.report for r in res.seeds], res.mean], "ok"
        except Exception as exc:  # noqa: BLE001 - a failed point must not stop the sweep
            log.error("sweep point %s=%s failed: %s", axis, value, exc)
            reports = [MetricReport(run=p_spec.name, seed=str(s)) for s in seeds]
            reports.append(MetricReport(run=p_spec.name, seed="mean"))
            status = "failed"
            if p_dir is not None:
                p_dir.mkdir(parents=True, exist_ok=True)
                (p_dir / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
        rows += [(axis, value, status, r) for r in reports]
    if out is not None:
        write_metrics_csv([r for *_, r in rows], out / "sweep.csv", SWEEP_COLUMNS,
                          [(a, v, s) for a, v, s, _ in rows])
    return rows


# -- two-moons regions -------------------------------------------------------

def two_moons_regions(resolution: int = 200, bounds=((-1.5, 2.5), (-1.0, 1.5)), strip_gap: float = 0.05,
                      strip_reach: float = 0.5, arc_points: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Lattice points on the inter-moon boundary strip, and points on the moon cores.

    The strip holds lattice points about equally far from both noiseless arcs
    (distance gap below ``strip_gap``) and within ``strip_reach`` of
    them. The cores are points on the arcs themselves.
    """
    t = np.linspace(0.0, np.pi, arc_points)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    _, _, pts = lattice(bounds, resolution)
    d0 = np.sqrt(((pts[:, None, :] - upper[None]) ** 2).sum(-1)).min(axis=1)
    d1 = np.sqrt(((pts[:, None, :] - lower[None]) ** 2).sum(-1)).min(axis=1)
    strip = pts[(np.abs(d0 - d1) < strip_gap) & (np.minimum(d0, d1) < strip_reach)]
    return strip, np.vstack([upper, lower])
