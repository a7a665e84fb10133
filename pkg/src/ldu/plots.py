"""Deterministic SVG figures from run artifacts.

File names are fixed: ``pca_projection.svg`` (from ``projection.csv``),
``confidence_aleatoric.svg`` / ``confidence_epistemic.svg`` (from
``grid.csv``, with ``train.csv`` overlaid when present) and
``loss_curves.svg`` (from ``history.csv``, one chart per loss column).
Coordinates are printed with two decimals so reruns produce identical bytes.
"""

from __future__ import annotations

import csv
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

LOSS_COLUMNS = ("task", "dis", "entrop", "unc", "total")
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")
# viridis sampled at five stops
_CMAP = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]], dtype=np.float64)


class PlotInputError(FileNotFoundError):
    pass


def _read(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.is_file():
        raise PlotInputError(f"missing plot input {path.name} in {path.parent}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise PlotInputError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def _f(v: float) -> str:
    return f"{v:.2f}"


def colormap(values: np.ndarray, lo: float, hi: float) -> list[str]:
    t = np.zeros_like(values) if hi <= lo else np.clip((values - lo) / (hi - lo), 0.0, 1.0)
    pos = t * (len(_CMAP) - 1)
    i = np.minimum(pos.astype(int), len(_CMAP) - 2)
    frac = (pos - i)[:, None]
    rgb = np.rint(_CMAP[i] * (1 - frac) + _CMAP[i + 1] * frac).astype(int)
    return [f"#{r:02x}{g:02x}{b:02x}" for r, g, b in rgb]


class _Canvas:
    def __init__(self, width: int, height: int, title: str = ""):
        self.width = width
        self.height = height
        self.parts = []
        if title:
            self.text(width / 2, 18, title, size=14, anchor="middle")

    def add(self, s: str) -> None:
        self.parts.append(s)

    def text(self, x, y, s, size=11, anchor="start") -> None:
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" '
                 f'font-family="sans-serif">{escape(str(s))}</text>')

    def render(self) -> str:
        head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">\n'
                f'<rect width="{self.width}" height="{self.height}" fill="white"/>\n')
        return head + "\n".join(self.parts) + "\n</svg>\n"

    def save(self, path: Path) -> Path:
        path.write_text(self.render())
        return path


def _scale(v, lo, hi, a, b):
    v = np.asarray(v, dtype=np.float64)
    if hi <= lo:
        return np.full_like(v, (a + b) / 2.0)
    return a + (v - lo) / (hi - lo) * (b - a)


def scatter_svg(points: np.ndarray, labels, path: Path, title: str = "PCA projection") -> Path:
    size, pad = 480, 40
    c = _Canvas(size, size, title)
    (x0, y0), (x1, y1) = points.min(axis=0), points.max(axis=0)
    px = _scale(points[:, 0], x0, x1, pad, size - pad)
    py = _scale(points[:, 1], y0, y1, size - pad, pad)
    c.add(f'<rect x="{pad}" y="{pad}" width="{size - 2 * pad}" height="{size - 2 * pad}" '
          f'fill="none" stroke="#444"/>')
    c.add('<g class="markers">')
    for x, y, lab in zip(px, py, labels):
        color = PALETTE[int(lab) % len(PALETTE)]
        c.add(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="2.5" fill="{color}" fill-opacity="0.7"/>')
    c.add("</g>")
    c.text(size / 2, size - 10, "pc0", anchor="middle")
    c.text(10, size / 2, "pc1")
    return c.save(path)


def heatmap_svg(values: np.ndarray, resolution: int, bounds, path: Path, title: str,
                overlay: np.ndarray | None = None, overlay_labels=None) -> Path:
    """``values`` is row-major with row ``i`` at the ``i``-th y level, drawn bottom-up."""
    size, pad = 480, 40
    c = _Canvas(size + 60, size, title)
    cell = (size - 2 * pad) / resolution
    lo, hi = float(values.min()), float(values.max())
    colors = colormap(values, lo, hi)
    c.add('<g class="cells">')
    for k, color in enumerate(colors):
        i, j = divmod(k, resolution)
        x = pad + j * cell
        y = pad + (resolution - 1 - i) * cell
        c.add(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(cell + 0.05)}" height="{_f(cell + 0.05)}" fill="{color}"/>')
    c.add("</g>")
    if overlay is not None and len(overlay):
        (bx0, bx1), (by0, by1) = bounds
        ox = _scale(overlay[:, 0], bx0, bx1, pad, size - pad)
        oy = _scale(overlay[:, 1], by0, by1, size - pad, pad)
        c.add('<g class="overlay">')
        for x, y, lab in zip(ox, oy, overlay_labels):
            color = PALETTE[int(lab) % len(PALETTE)] if lab >= 0 else "#00aa00"
            c.add(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="1.8" fill="{color}" stroke="white" stroke-width="0.3"/>')
        c.add("</g>")
    # colour bar
    bar = colormap(np.linspace(0.0, 1.0, 20), 0.0, 1.0)
    step = (size - 2 * pad) / len(bar)
    for k, color in enumerate(bar):
        y = size - pad - (k + 1) * step
        c.add(f'<rect x="{size - pad + 15}" y="{_f(y)}" width="12" height="{_f(step + 0.05)}" fill="{color}"/>')
    c.text(size - pad + 30, pad + 8, f"{hi:.3g}")
    c.text(size - pad + 30, size - pad, f"{lo:.3g}")
    return c.save(path)


def line_charts_svg(series: dict[str, np.ndarray], path: Path, title: str = "training curves") -> Path:
    w, h, pad = 240, 200, 36
    c = _Canvas(w * len(series), h + 30, title)
    for k, (name, ys) in enumerate(series.items()):
        ox, oy = k * w, 30
        c.add(f'<g class="chart" id="chart-{escape(name)}">')
        c.add(f'<rect x="{ox + pad}" y="{oy + 10}" width="{w - pad - 10}" height="{h - pad - 10}" '
              f'fill="none" stroke="#444"/>')
        c.text(ox + w / 2, oy + 6, name, anchor="middle")
        if len(ys):
            finite = ys[np.isfinite(ys)]
            lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
            xs = _scale(np.arange(len(ys)), 0, max(len(ys) - 1, 1), ox + pad, ox + w - 10)
            yy = _scale(np.nan_to_num(ys, nan=lo), lo, hi, oy + h - pad, oy + 10)
            pts = " ".join(f"{_f(a)},{_f(b)}" for a, b in zip(xs, yy))
            c.add(f'<polyline points="{pts}" fill="none" stroke="{PALETTE[k % len(PALETTE)]}" stroke-width="1.5"/>')
            c.text(ox + 2, oy + 18, f"{hi:.3g}", size=9)
            c.text(ox + 2, oy + h - pad, f"{lo:.3g}", size=9)
        c.text(ox + w / 2, oy + h - pad + 16, "epoch", size=9, anchor="middle")
        c.add("</g>")
    return c.save(path)


def emit_plots(run_dir, projection: bool = True, grid: bool = True, curves: bool = True) -> list[Path]:
    """Write every figure whose input CSV is present.

    ``history.csv`` is required when ``curves`` is set; a directory holding
    ``seed_*`` subdirectories is plotted seed by seed.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise PlotInputError(f"{run_dir}: not a directory")
    if not (run_dir / "history.csv").exists():
        subdirs = sorted(p for p in run_dir.glob("seed_*") if p.is_dir())
        if subdirs:
            return [f for d in subdirs for f in emit_plots(d, projection, grid, curves)]
    written = []
    if curves:
        header, rows = _read(run_dir / "history.csv")
        missing = [col for col in LOSS_COLUMNS if col not in header]
        if missing:
            raise PlotInputError(f"{run_dir / 'history.csv'}: missing column {missing[0]!r}")
        data = {col: np.array([float(r[header.index(col)]) for r in rows]) for col in LOSS_COLUMNS}
        written.append(line_charts_svg(data, run_dir / "loss_curves.svg"))
    if projection and (run_dir / "projection.csv").exists():
        _, rows = _read(run_dir / "projection.csv")
        pts = np.array([[float(r[0]), float(r[1])] for r in rows])
        written.append(scatter_svg(pts, [int(r[2]) for r in rows], run_dir / "pca_projection.svg"))
    if grid and (run_dir / "grid.csv").exists():
        header, rows = _read(run_dir / "grid.csv")
        arr = np.array([[float(v) for v in r] for r in rows])
        r = int(arr[:, 0].max()) + 1
        bounds = ((arr[:, 2].min(), arr[:, 2].max()), (arr[:, 3].min(), arr[:, 3].max()))
        overlay = labels = None
        if (run_dir / "train.csv").exists():
            t_header, t_rows = _read(run_dir / "train.csv")
            overlay = np.array([[float(v[0]), float(v[1])] for v in t_rows])
            labels = [int(float(v[2])) for v in t_rows]
        for name in ("aleatoric", "epistemic"):
            if name in header:
                written.append(heatmap_svg(arr[:, header.index(name)], r, bounds,
                                           run_dir / f"confidence_{name}.svg", f"{name} uncertainty",
                                           overlay, labels))
    if not written:
        raise PlotInputError(f"{run_dir}: none of history.csv, projection.csv, grid.csv found")
    return written
