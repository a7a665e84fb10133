"""Seeded synthetic datasets and a lossless CSV format.

CSV schema: header ``x0,x1,...,x{d-1},target,domain_tag`` followed by one row
per sample. Floats are written with 17 significant digits; ``domain_tag`` is
``id`` or ``ood``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_RING_CENTER = (0.5, 0.25)


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    ood: np.ndarray  # bool per sample; True = out of distribution
    seed: int = 0
    descriptor: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        self.ood = np.asarray(self.ood, dtype=bool)
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be a matrix, got shape {self.inputs.shape}")
        if not (len(self.inputs) == len(self.targets) == len(self.ood)):
            raise ValueError("inputs, targets and domain tags differ in length")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def domain_tags(self) -> list[str]:
        return ["ood" if o else "id" for o in self.ood]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.ood[idx], self.seed, self.descriptor)


def two_moons(n: int, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaving unit half-circles, ``n / 2`` points each.

    Class 0 lies on the upper half of the unit circle at the origin; class 1 is
    the lower half-circle ``(1 - cos t, 0.5 - sin t)``. Points are evenly spaced
    in angle, jittered by isotropic Gaussian noise and shuffled.
    """
    if n < 2 or n % 2:
        raise ValueError(f"two_moons needs an even n >= 2, got {n}")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    x = np.vstack([upper, lower])
    y = np.repeat([0, 1], half)
    rng = np.random.default_rng([seed, 101])
    if noise > 0:
        x = x + noise * rng.standard_normal(x.shape)
    perm = rng.permutation(n)
    return Dataset(x[perm], y[perm], np.zeros(n, dtype=bool), seed, f"two_moons(n={n},noise={noise})")


def ood_ring(n: int, center=DEFAULT_RING_CENTER, inner_radius: float = 2.0, outer_radius: float = 3.0,
             seed: int = 0) -> Dataset:
    """Points uniform over the annulus ``inner <= |x - center| <= outer``, all tagged OOD."""
    if not 0 < inner_radius < outer_radius:
        raise ValueError(f"need 0 < inner < outer, got {inner_radius}, {outer_radius}")
    rng = np.random.default_rng([seed, 103])
    # inverse-CDF on r^2 gives uniform area density
    r = np.sqrt(rng.uniform(inner_radius ** 2, outer_radius ** 2, n))
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    x = np.asarray(center, dtype=np.float64) + np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return Dataset(x, np.full(n, -1), np.ones(n, dtype=bool), seed,
                   f"ood_ring(r={inner_radius}..{outer_radius})")


def blob_means(k: int, d: int, spread: float, seed: int) -> np.ndarray:
    """``k`` seeded means on the sphere of radius ``4 * spread``, pairwise at least ``2 * spread`` apart."""
    sub = 0
    while True:
        rng = np.random.default_rng([seed, 107, sub])
        v = rng.standard_normal((k, d))
        means = 4.0 * spread * v / np.linalg.norm(v, axis=1, keepdims=True)
        diffs = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diffs ** 2).sum(-1))[np.triu_indices(k, 1)]
        if spread == 0 or dist.min() >= 2.0 * spread:
            return means
        sub += 1


def gaussian_blobs(k: int, n_per_class: int, d: int = 2, spread: float = 1.0, seed: int = 0,
                   means: np.ndarray | None = None) -> Dataset:
    """Isotropic Gaussian clusters of std ``spread`` around seeded means."""
    if k < 2:
        raise ValueError("gaussian_blobs needs k >= 2")
    if means is None:
        means = blob_means(k, d, spread, seed)
    rng = np.random.default_rng([seed, 109])
    x = np.repeat(means, n_per_class, axis=0) + spread * rng.standard_normal((k * n_per_class, d))
    y = np.repeat(np.arange(k), n_per_class)
    perm = rng.permutation(len(y))
    return Dataset(x[perm], y[perm], np.zeros(len(y), dtype=bool), seed,
                   f"gaussian_blobs(k={k},d={d},spread={spread})")


def shifted_blobs(id_means: np.ndarray, n_per_blob: int, spread: float, seed: int) -> Dataset:
    """OOD blobs centered midway between each pair of neighbouring ID means, all tagged OOD.

    Midpoints of ID class means sit in the regions a classifier must extrapolate
    into; each OOD blob keeps the ID spread.
    """
    k, d = id_means.shape
    mids = np.array([(id_means[i] + id_means[(i + 1) % k]) / 2.0 for i in range(k)])
    # push midpoints back onto the ID sphere so OOD inputs keep the ID scale
    radius = np.linalg.norm(id_means, axis=1).mean()
    norms = np.linalg.norm(mids, axis=1, keepdims=True)
    mids = np.where(norms > 0, mids / np.where(norms > 0, norms, 1.0) * radius, mids)
    rng = np.random.default_rng([seed, 113])
    x = np.repeat(mids, n_per_blob, axis=0) + spread * rng.standard_normal((k * n_per_blob, d))
    return Dataset(x, np.full(len(x), -1), np.ones(len(x), dtype=bool), seed, "shifted_blobs")


def sinusoid_regression(n: int, x_range=(-3.0, 3.0), noise: str = "heteroscedastic", seed: int = 0,
                        noise_level: float = 0.1) -> Dataset:
    """``y = sin(2x) + 0.3x + eps`` with constant std or std ``noise_level * |x|``."""
    if n < 2:
        raise ValueError("sinusoid_regression needs n >= 2")
    lo, hi = x_range
    rng = np.random.default_rng([seed, 127])
    x = rng.uniform(lo, hi, n)
    if noise == "constant":
        std = np.full(n, noise_level)
    elif noise == "heteroscedastic":
        std = noise_level * np.abs(x)
    elif noise == "none":
        std = np.zeros(n)
    else:
        raise ValueError(f"unknown noise mode {noise!r}")
    y = np.sin(2.0 * x) + 0.3 * x + std * rng.standard_normal(n)
    return Dataset(x[:, None], y, np.zeros(n, dtype=bool), seed, f"sinusoid({noise})")


def sinusoid_curve(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sin(2.0 * x) + 0.3 * x


# -- CSV ---------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(data: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"x{i}" for i in range(data.dim)] + ["target", "domain_tag"]
    integer_targets = np.issubdtype(data.targets.dtype, np.integer)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for x, t, tag in zip(data.inputs, data.targets, data.domain_tags):
            w.writerow([*(_fmt(v) for v in x), str(int(t)) if integer_targets else _fmt(t), tag])
    return path


def read_csv(path, seed: int = 0) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(rows):
        raise DatasetFormatError(f"{path}: empty dataset file")
    header = rows[0]
    if len(header) < 3:
        raise DatasetFormatError(f"{path}: header needs at least x0,target,domain_tag")
    d = len(header) - 2
    expected = [f"x{i}" for i in range(d)] + ["target", "domain_tag"]
    for got, want in zip(header, expected):
        if got != want:
            raise DatasetFormatError(f"{path}: unexpected column {got!r}, expected {want!r}")
    body = rows[1:]
    if not body:
        raise DatasetFormatError(f"{path}: empty dataset (header only)")
    inputs, targets, ood = [], [], []
    integer_targets = True
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DatasetFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            inputs.append([float(v) for v in row[:d]])
            t = row[d]
            if integer_targets and t.lstrip("-").isdigit():
                targets.append(int(t))
            else:
                integer_targets = False
                targets.append(float(t))
        except ValueError:
            raise DatasetFormatError(f"{path}:{lineno}: malformed number") from None
        tag = row[d + 1]
        if tag not in ("id", "ood"):
            raise DatasetFormatError(f"{path}:{lineno}: domain_tag must be 'id' or 'ood', got {tag!r}")
        ood.append(tag == "ood")
    t_arr = np.array(targets, dtype=np.int64 if integer_targets else np.float64)
    return Dataset(np.array(inputs), t_arr, np.array(ood), seed, path.stem)
