import xml.etree.ElementTree as ET

import numpy as np
import pytest

from ldu.plots import PlotInputError, colormap, emit_plots, heatmap_svg, line_charts_svg, scatter_svg

NS = "{http://www.w3.org/2000/svg}"


def parse(path):
    return ET.parse(path).getroot()


def test_scatter_one_marker_per_row(tmp_path):
    pts = np.random.default_rng(0).normal(size=(37, 2))
    root = parse(scatter_svg(pts, [0, 1] * 18 + [0], tmp_path / "s.svg"))
    markers = root.find(f"{NS}g[@class='markers']")
    assert len(markers.findall(f"{NS}circle")) == 37


@pytest.mark.parametrize("r", [1, 4, 11])
def test_heatmap_has_r_by_r_cells(tmp_path, r):
    vals = np.linspace(0, 1, r * r)
    root = parse(heatmap_svg(vals, r, ((0, 1), (0, 1)), tmp_path / "h.svg", "t"))
    cells = root.find(f"{NS}g[@class='cells']")
    assert len(cells.findall(f"{NS}rect")) == r * r


def test_line_charts_one_group_per_series(tmp_path):
    series = {k: np.arange(5.0) * i for i, k in enumerate(("task", "dis", "entrop", "unc", "total"))}
    root = parse(line_charts_svg(series, tmp_path / "l.svg"))
    charts = root.findall(f"{NS}g[@class='chart']")
    assert [c.get("id") for c in charts] == ["chart-task", "chart-dis", "chart-entrop", "chart-unc", "chart-total"]


def test_colormap_endpoints():
    assert colormap(np.array([0.0, 1.0]), 0.0, 1.0) == ["#440154", "#fde725"]
    assert len(set(colormap(np.ones(3), 1.0, 1.0))) == 1


def write_history(d, rows=3):
    d.mkdir(parents=True, exist_ok=True)
    lines = ["epoch,task,dis,entrop,unc,total,accuracy"]
    lines += [f"{i},1.0,-2.0,-0.5,0.4,0.79,0.9" for i in range(rows)]
    (d / "history.csv").write_text("\n".join(lines) + "\n")


def test_emit_plots_and_determinism(tmp_path):
    write_history(tmp_path)
    (tmp_path / "projection.csv").write_text("pc0,pc1,label\n0.1,0.2,0\n0.3,-0.1,1\n0.0,0.0,1\n")
    rows = ["row,col,x,y,aleatoric"]
    for k in range(9):
        rows.append(f"{k // 3},{k % 3},{k % 3},{k // 3},{k / 8}")
    (tmp_path / "grid.csv").write_text("\n".join(rows) + "\n")
    first = emit_plots(tmp_path)
    assert sorted(p.name for p in first) == ["confidence_aleatoric.svg", "loss_curves.svg", "pca_projection.svg"]
    blobs = [p.read_bytes() for p in first]
    assert [p.read_bytes() for p in emit_plots(tmp_path)] == blobs
    for p in first:
        parse(p)


def test_emit_plots_recurses_into_seeds(tmp_path):
    write_history(tmp_path / "seed_0")
    write_history(tmp_path / "seed_1")
    assert len(emit_plots(tmp_path)) == 2


def test_missing_history_names_the_csv(tmp_path):
    (tmp_path / "projection.csv").write_text("pc0,pc1,label\n0,0,0\n")
    with pytest.raises(PlotInputError, match="history.csv"):
        emit_plots(tmp_path)
    with pytest.raises(PlotInputError):
        emit_plots(tmp_path / "nope")


def test_history_missing_column(tmp_path):
    (tmp_path / "history.csv").write_text("epoch,task\n0,1.0\n")
    with pytest.raises(PlotInputError, match="'dis'"):
        emit_plots(tmp_path)
