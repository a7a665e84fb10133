"""Feature-collapse and smoothness diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import aleatoric_score, epistemic_score, predict


class DegenerateDataError(ValueError):
    pass


@dataclass
class PCAResult:
    projection: np.ndarray  # b x 2
    components: np.ndarray  # 2 x n, rows are unit principal directions
    explained_variance: np.ndarray  # 2
    mean: np.ndarray


@dataclass
class CollapseReport:
    projection: np.ndarray
    explained_variance: np.ndarray
    separation_score: float
    model_descriptor: str = ""


@dataclass
class LipschitzEstimate:
    max_ratio: float
    pair_count: int
    domain: dict


def pca_2d(features) -> PCAResult:
    """Project centered rows onto the top-2 covariance eigenvectors.

    Each component is signed so its largest-magnitude entry is positive.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ValueError(f"pca_2d needs at least 3 rows and 2 columns, got {x.shape}")
    mean = x.mean(axis=0)
    xc = x - mean
    if not np.any(np.abs(xc) > 0):
        raise DegenerateDataError("all rows are identical; principal directions are undefined")
    cov = xc.T @ xc / (x.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:2]
    comps = vecs[:, order].T
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1.0
    var = np.clip(vals[order], 0.0, None)
    return PCAResult(xc @ comps.T, comps, var, mean)


def collapse_score(projection, labels) -> float:
    """Mean silhouette coefficient with Euclidean distance."""
    x = np.asarray(projection, dtype=np.float64)
    y = np.asarray(labels)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise ValueError("silhouette needs at least two classes")
    if np.any(counts < 2):
        raise ValueError("every class needs at least two samples")
    d = np.sqrt(np.maximum(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1), 0.0))
    member = y[:, None] == classes[None, :]  # b x k
    sums = d @ member  # b x k: distance sum to each class
    own = member.argmax(axis=1)
    rows = np.arange(len(y))
    a = sums[rows, own] / (counts[own] - 1)
    mean_other = sums / counts[None, :]
    mean_other[rows, own] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def collapse_report(features, labels, descriptor: str = "") -> CollapseReport:
    pca = pca_2d(features)
    return CollapseReport(pca.projection, pca.explained_variance, collapse_score(pca.projection, labels), descriptor)


def lattice(bounds, resolution: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-major ``resolution x resolution`` lattice over ``((xmin, xmax), (ymin, ymax))``."""
    (x0, x1), (y0, y1) = bounds
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, resolution)
    gx, gy = np.meshgrid(xs, ys)
    return xs, ys, np.column_stack([gx.ravel(), gy.ravel()])


def confidence_grid(model, score: str = "aleatoric", bounds=((-2.0, 3.0), (-2.0, 2.5)), resolution: int = 50,
                    epistemic_mode: str = "unc_head") -> np.ndarray:
    """Uncertainty score at each lattice point, shape ``(resolution, resolution)``; row ``i`` is ``y = ys[i]``."""
    if model.spec.input_dim != 2:
        raise ValueError("confidence_grid needs a model with 2-D inputs")
    _, _, pts = lattice(bounds, resolution)
    out = predict(model, pts)
    if score == "aleatoric":
        values = aleatoric_score(out, model.task)
    elif score == "epistemic":
        values = epistemic_score(out, epistemic_mode)
    else:
        raise ValueError(f"unknown score {score!r}")
    return values.reshape(resolution, resolution)


def lipschitz_ratio(fn: Callable[[np.ndarray], np.ndarray], low, high, min_norm: float, pair_count: int,
                    seed: int = 0, batch: int = 20000, pairs: str = "local",
                    min_gap: float = 1e-4) -> LipschitzEstimate:
    """Largest ``|f(a) - f(b)| / |a - b|`` over seeded pairs drawn in a box.

    Every point is uniform in ``[low, high]`` conditioned on norm >= ``min_norm``
    (rejection sampling). With ``pairs="local"`` the partner of ``a`` is
    ``a + r u`` for a uniform direction ``u`` and a log-uniform gap ``r`` between
    ``min_gap`` and the box diagonal, redrawn until it also lies in the domain;
    this probes slopes at every scale. ``pairs="independent"`` draws both points
    independently. Zero-distance pairs are skipped.
    """
    if min_norm <= 0:
        raise ValueError("min_norm must be positive")
    if pairs not in ("local", "independent"):
        raise ValueError(f"unknown pair sampler {pairs!r}")
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    d = low.size
    rng = np.random.default_rng([seed, 131])
    diag = float(np.linalg.norm(high - low))

    def inside(p):
        return np.all((p >= low) & (p <= high), axis=1) & (np.linalg.norm(p, axis=1) >= min_norm)

    def draw(k):
        pts = np.empty((0, d))
        while len(pts) < k:
            cand = rng.uniform(low, high, (2 * k, d))
            pts = np.vstack([pts, cand[inside(cand)]])
        return pts[:k]

    def draw_pairs(k):
        if pairs == "independent":
            return draw(k), draw(k)
        a_out, b_out = np.empty((0, d)), np.empty((0, d))
        while len(a_out) < k:
            a = draw(k)
            r = np.exp(rng.uniform(np.log(min_gap), np.log(diag), k))
            u = rng.standard_normal((k, d))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            b = a + r[:, None] * u
            ok = inside(b)
            a_out, b_out = np.vstack([a_out, a[ok]]), np.vstack([b_out, b[ok]])
        return a_out[:k], b_out[:k]

    best = 0.0
    done = 0
    while done < pair_count:
        k = min(batch, pair_count - done)
        a, b = draw_pairs(k)
        dx = np.linalg.norm(a - b, axis=1)
        keep = dx > 0
        if keep.any():
            dy = np.linalg.norm(np.asarray(fn(a[keep])) - np.asarray(fn(b[keep])), axis=1)
            best = max(best, float((dy / dx[keep]).max()))
        done += k
    if not np.isfinite(best):
        raise FloatingPointError("Lipschitz ratio is not finite on the sampled pairs")
    return LipschitzEstimate(best, pair_count, {"low": low.tolist(), "high": high.tolist(),
                                                "min_norm": min_norm, "pairs": pairs})
