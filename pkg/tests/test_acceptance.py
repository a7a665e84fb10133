"""Acceptance criteria, one test each.

Every test records a one-line verdict in ``RESULTS``; conftest prints them at
the end of the pytest run. ``python tests/test_acceptance.py`` runs the suite
standalone and prints the same lines.
"""

import functools
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from ldu.analysis import lipschitz_ratio
from ldu.config import parse_config
from ldu.datasets import two_moons
from ldu.experiments import LOSS_GRID, apply_point, run_experiment, run_sweep, sweep_points, two_moons_regions
from ldu.layer import dm_forward_cos, init_prototypes, ldu_embed
from ldu.losses import _task_loss, ldu_losses, loss_entrop, normalize_batch_losses
from ldu.metrics import aupr, auroc, ause, ece, fpr_at_95_tpr
from ldu.model import ModelSpec, aleatoric_score, build_model, epistemic_score, predict
from ldu.tensor import Tensor, grad_check
from ldu.training import evaluate_accuracy, train_stage1

try:
    from oracles import ause_oracle, aupr_oracle, auroc_oracle, ece_oracle, fpr95_oracle
except ImportError:  # script mode
    import sys
    sys.path.insert(0, str(Path(__file__).parent))
    from oracles import ause_oracle, aupr_oracle, auroc_oracle, ece_oracle, fpr95_oracle

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SEEDS = [0, 1, 2, 3, 4]
RESULTS = {}

pytestmark = pytest.mark.slow


def record(n: int, ok: bool, detail: str) -> None:
    RESULTS[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[n])


def timed_run(config: str, out_dir=None, **overrides):
    spec = parse_config(CONFIGS / config)
    for key, value in overrides.items():
        section, name = key.split("__")
        setattr(getattr(spec, section), name, value)
    seconds = []
    seeds = []
    for s in SEEDS:
        t0 = time.perf_counter()
        r = run_experiment(spec, None if out_dir is None else Path(out_dir) / f"s{s}", [s])
        seconds.append(time.perf_counter() - t0)
        seeds.append(r.seeds[0])
    return spec, seeds, seconds


@functools.lru_cache(maxsize=None)
def moons_ldu():
    return timed_run("two_moons.yaml")


@functools.lru_cache(maxsize=None)
def moons_mlp():
    return timed_run("two_moons_mlp.yaml")


# -- 1 ------------------------------------------------------------------------

def test_c01_two_moons_accuracy():
    # stage 2 only moves the uncertainty head, so accuracy is the stage-1 value
    _, ldu, t_ldu = moons_ldu()
    _, mlp, t_mlp = moons_mlp()
    acc_ldu = [evaluate_accuracy(r.model, r.train) for r in ldu]
    acc_mlp = [evaluate_accuracy(r.model, r.train) for r in mlp]
    n_ldu = sum(a >= 0.99 for a in acc_ldu)
    n_mlp = sum(a >= 0.99 for a in acc_mlp)
    slowest = max(t_ldu + t_mlp)
    ok = n_ldu >= 4 and n_mlp >= 4 and slowest < 60
    record(1, ok, f"train acc >= 0.99 on LDU {n_ldu}/5 {np.round(acc_ldu, 3).tolist()}, "
                  f"MLP {n_mlp}/5 {np.round(acc_mlp, 3).tolist()}; slowest seed {slowest:.1f}s (< 60s)")
    assert ok


# -- 2 ------------------------------------------------------------------------

def test_c02_collapse_separation():
    t0 = time.perf_counter()
    _, ldu, t_ldu = moons_ldu()
    _, mlp, t_mlp = moons_mlp()
    s_ldu = [r.collapse.separation_score for r in ldu]
    s_mlp = [r.collapse.separation_score for r in mlp]
    runtime = sum(t_ldu) + sum(t_mlp) + (time.perf_counter() - t0)
    ok = float(np.mean(s_ldu)) > float(np.mean(s_mlp)) and runtime < 120
    record(2, ok, f"mean silhouette LDU {np.mean(s_ldu):.3f} vs MLP {np.mean(s_mlp):.3f}; "
                  f"runtime {runtime:.1f}s (< 120s)")
    assert ok


# -- 3 ------------------------------------------------------------------------

def test_c03_two_stage_uncertainty():
    _, ldu, seconds = moons_ldu()
    strip, cores = two_moons_regions()
    gaps, aucs = [], []
    for r in ldu:
        # the aleatoric map depends on logits only and is untouched by stage 2
        gaps.append(float(aleatoric_score(predict(r.model, strip)).mean()
                          - aleatoric_score(predict(r.model, cores)).mean()))
        pos = epistemic_score(predict(r.model, r.ood.inputs))
        neg = epistemic_score(predict(r.model, r.test.inputs))
        aucs.append(auroc(pos, neg))
    n_auc = sum(a > 0.9 for a in aucs)
    ok = float(np.mean(gaps)) > 0 and n_auc >= 4 and sum(seconds) < 180
    record(3, ok, f"strip-minus-core aleatoric mean {np.mean(gaps):.3f} (positive on {sum(g > 0 for g in gaps)}/5); "
                  f"unc-head AUROC > 0.9 on {n_auc}/5 {np.round(aucs, 3).tolist()}; runtime {sum(seconds):.1f}s")
    assert ok


# -- 4 ------------------------------------------------------------------------

def test_c04_gradient_check():
    model = build_model(ModelSpec(seed=0))
    train = two_moons(1000, 0.1, 0)
    x, y = train.inputs[:16], train.targets[:16]
    # the normalized task losses are detached targets, so hold them fixed
    out = model.forward(x)
    targets = normalize_batch_losses(_task_loss("classification", out.logits, y)[0])
    params = model.parameters()
    err = grad_check(lambda _: ldu_losses(model, x, y, 0.1, unc_targets=targets).total, params)
    names = [n for n, _ in model.named_parameters()]
    ok = err < 1e-4 and "prototypes" in names
    record(4, ok, f"max relative error {err:.2e} over {sum(p.size for p in params)} parameters (< 1e-4)")
    assert ok


# -- 5 ------------------------------------------------------------------------

def test_c05_metric_oracles():
    rng = np.random.default_rng(2024)
    worst = {"ece": 0.0, "auroc": 0.0, "aupr": 0.0, "fpr95": 0.0, "ause": 0.0}
    for i in range(100):
        n_pos, n_neg = rng.integers(1, 101, 2)
        pos, neg = rng.uniform(size=n_pos), rng.uniform(size=n_neg)
        if i % 2:  # coarse scores exercise tie handling
            pos, neg = np.round(pos * 8) / 8, np.round(neg * 8) / 8
        worst["auroc"] = max(worst["auroc"], abs(auroc(pos, neg) - auroc_oracle(pos, neg)))
        worst["aupr"] = max(worst["aupr"], abs(aupr(pos, neg) - aupr_oracle(pos, neg)))
        worst["fpr95"] = max(worst["fpr95"], abs(fpr_at_95_tpr(pos, neg) - fpr95_oracle(pos, neg)))
        n = int(rng.integers(2, 201))
        conf, hits = rng.uniform(size=n), rng.integers(0, 2, n)
        if i % 2:
            conf = np.round(conf * 15) / 15  # values on bin edges
        worst["ece"] = max(worst["ece"], abs(ece(conf, hits) - ece_oracle(conf, hits, 15)))
        err = rng.normal(size=n)
        unc = rng.uniform(size=n) if i % 2 == 0 else rng.integers(0, 5, n).astype(float)
        worst["ause"] = max(worst["ause"], abs(ause(err, unc) - ause_oracle(err, unc)))
    ok = max(worst.values()) <= 1e-12
    record(5, ok, "worst |metric - oracle| over 100 instances: "
                  + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<= 1e-12)")
    assert ok


# -- 6 ------------------------------------------------------------------------

def test_c06_bound_invariants():
    rng = np.random.default_rng(6)
    n = 10_000
    bad = {"dm_cos": 0, "embed": 0, "entrop": 0, "normalize": 0}
    for i in range(n):
        d = int(rng.integers(1, 6))
        scale = 10.0 ** rng.uniform(-6, 4)
        z = rng.normal(size=(1, d)) * scale
        if i % 50 == 0:
            z[:] = 0.0
        bank = init_prototypes(int(rng.integers(1, 9)), d, i)
        s = dm_forward_cos(Tensor(z), bank).data
        bad["dm_cos"] += int(np.any((s < -1) | (s > 1)))
        e = ldu_embed(Tensor(z), bank).data
        bad["embed"] += int(np.any((e < math.exp(-1)) | (e > math.e)))
        m = int(rng.integers(1, 9))
        v = loss_entrop(Tensor(rng.normal(size=(1, m)) * 10.0 ** rng.uniform(-3, 3))).item()
        bad["entrop"] += int(not (-math.log(m) - 1e-12 <= v <= 0.0))
        losses = rng.normal(size=int(rng.integers(1, 20))) * 10.0 ** rng.uniform(-14, 6)
        t = normalize_batch_losses(losses)
        bad["normalize"] += int(np.any((t < 0) | (t > 1)))
    ok = sum(bad.values()) == 0
    record(6, ok, f"violations over {n} inputs each: " + ", ".join(f"{k} {v}" for k, v in bad.items()))
    assert ok


# -- 7 ------------------------------------------------------------------------

def test_c07_lipschitz_stability():
    bank = init_prototypes(16, 2, 0)
    fn = lambda z: ldu_embed(Tensor(z), bank).data  # noqa: E731
    small = lipschitz_ratio(fn, [-3, -3], [3, 3], 0.1, 10_000, seed=0).max_ratio
    large = lipschitz_ratio(fn, [-3, -3], [3, 3], 0.1, 100_000, seed=0).max_ratio
    growth = large / small
    ok = math.isfinite(large) and growth < 2.0
    record(7, ok, f"max ratio {small:.4f} at 1e4 pairs, {large:.4f} at 1e5 pairs, growth {growth:.3f}x (< 2x)")
    assert ok


# -- 8 ------------------------------------------------------------------------

def test_c08_ablation_harness():
    spec = parse_config(CONFIGS / "two_moons.yaml")
    spec.train.epochs = 5
    spec.train.stage2 = None
    with tempfile.TemporaryDirectory() as tmp:
        lam_rows = run_sweep(spec, "lambda", None, Path(tmp) / "lam", seeds=[0])
        loss_rows = run_sweep(spec, "losses", None, Path(tmp) / "loss", seeds=[0])
    lam_points = [v for _, v, _, r in lam_rows if r.seed == "mean"]
    loss_points = [v for _, v, _, r in loss_rows if r.seed == "mean"]

    off = apply_point(parse_config(CONFIGS / "two_moons.yaml"), "losses", "none")
    off.train.stage2 = None
    model = build_model(ModelSpec(**{**off.model.__dict__, "seed": 0}))
    hist = train_stage1(model, two_moons(1000, 0.1, 0), off.train)
    gap = float(np.max(np.abs(hist.column("total") - hist.column("task"))))

    ok = (lam_points == sweep_points("lambda") == ["0.01", "0.1", "0.5", "1.0", "2.0"]
          and len(loss_points) == 4 and set(loss_points) == set(LOSS_GRID) - {"none"}
          and all(s == "ok" for _, _, s, _ in lam_rows + loss_rows) and gap <= 1e-12)
    record(8, ok, f"lambda points {lam_points}; loss rows {loss_points}; "
                  f"toggles off max |total - task| {gap:.1e} over {len(hist)} epochs")
    assert ok


# -- 9 ------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def blobs_runs(out_dir=None):
    return timed_run("blobs.yaml", out_dir), timed_run("blobs_mlp.yaml")


def test_c09_toy_ood():
    (_, ldu, _), (_, mlp, _) = blobs_runs()
    a_ldu = [r.report.auroc for r in ldu]
    a_mlp = [r.report.auroc for r in mlp]
    ok = float(np.mean(a_ldu)) > float(np.mean(a_mlp))
    record(9, ok, f"mean OOD AUROC LDU {np.mean(a_ldu):.3f} {np.round(a_ldu, 3).tolist()} vs "
                  f"MCP {np.mean(a_mlp):.3f} {np.round(a_mlp, 3).tolist()}")
    assert ok


# -- 10 -----------------------------------------------------------------------

def test_c10_ause_regression():
    rng = np.random.default_rng(10)
    oracle_gap = max(abs(ause(e, np.abs(e))) for e in (rng.normal(size=int(rng.integers(2, 500))) for _ in range(50)))
    _, runs, _ = timed_run("sinusoid.yaml")
    wins, pairs = 0, []
    for r in runs:
        out = predict(r.model, r.test.inputs)
        err = out.logits.data.reshape(-1) - r.test.targets
        learned = ause(err, epistemic_score(out))
        constant = ause(err, np.zeros_like(err))
        pairs.append((round(learned, 3), round(constant, 3)))
        wins += learned < constant
    ok = oracle_gap <= 1e-12 and wins >= 4
    record(10, ok, f"AUSE with true |error| <= {oracle_gap:.1e}; LDU beats constant uncertainty on {wins}/5 "
                   f"(LDU, constant) = {pairs}")
    assert ok


# -- 11 -----------------------------------------------------------------------

def test_c11_determinism():
    spec = parse_config(CONFIGS / "two_moons.yaml")
    spec.train.epochs = 30
    spec.train.stage2.steps = 500
    spec.seeds = [0, 1]
    blobs = parse_config(CONFIGS / "blobs_mlp.yaml")
    same = []
    with tempfile.TemporaryDirectory() as tmp:
        for name, s in (("moons", spec), ("blobs", blobs)):
            run_experiment(s, Path(tmp) / f"{name}_a")
            run_experiment(s, Path(tmp) / f"{name}_b")
            files = sorted(p.relative_to(Path(tmp) / f"{name}_a")
                           for p in (Path(tmp) / f"{name}_a").rglob("metrics.csv"))
            same += [(Path(tmp) / f"{name}_a" / f).read_bytes() == (Path(tmp) / f"{name}_b" / f).read_bytes()
                     for f in files]
    ok = len(same) > 0 and all(same)
    record(11, ok, f"{sum(same)}/{len(same)} metric CSVs byte-identical on rerun")
    assert ok


if __name__ == "__main__":
    import sys

    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_c")):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
