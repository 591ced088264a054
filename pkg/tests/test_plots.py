import xml.etree.ElementTree as ET

import numpy as np

from psdlab.plots import (
    ScatterPoint,
    line_figure,
    line_plot,
    pca_figure,
    pca_scatter,
    scatter_figure,
)


def legend_labels(fig) -> list[str]:
    legend = fig.axes[0].get_legend()
    return [t.get_text() for t in legend.get_texts()] if legend else []


def test_line_figure_drops_undefined_points():
    series = {"ss/sgd_raw": [(0.05, 0.9), (0.01, 0.2)], "ac<&>": [(0.01, None), (0.05, 0.4)]}
    fig = line_figure(series, "TPR & FPR", "p", "rate")
    ax = fig.axes[0]
    assert [list(line.get_xdata()) for line in ax.lines] == [[0.01, 0.05], [0.05]]
    assert legend_labels(fig) == ["ss/sgd_raw", "ac<&>"]
    assert ax.get_title() == "TPR & FPR"


def test_line_figure_with_only_undefined_points():
    fig = line_figure({"gram": [(0.1, None)]}, "empty", "x", "y")
    assert not fig.axes[0].lines
    assert legend_labels(fig) == []


def test_scatter_figure_groups_by_colour_and_shape():
    points = [ScatterPoint(0.1, 0.5, "badnets", "ss"), ScatterPoint(0.3, 0.9, "blend_weak", "gram"),
              ScatterPoint(0.2, 0.7, "badnets", "ss")]
    fig = scatter_figure(points, "t", "x", "y")
    sizes = [len(c.get_offsets()) for c in fig.axes[0].collections]
    assert sizes == [2, 1]
    assert legend_labels(fig) == ["badnets / ss", "blend_weak / gram"]


def test_pca_figure_draws_every_sample(rng):
    features = rng.standard_normal((30, 5))
    poisoned = np.zeros(30, dtype=bool)
    poisoned[:4] = True
    fig = pca_figure(features, poisoned, "PCA")
    clean, marked = fig.axes[0].collections
    assert (len(clean.get_offsets()), len(marked.get_offsets())) == (26, 4)
    assert legend_labels(fig) == ["clean", "poisoned"]


def test_pca_figure_on_one_dimensional_features(rng):
    fig = pca_figure(rng.standard_normal((10, 1)), np.zeros(10, dtype=bool), "1-D")
    (clean,) = fig.axes[0].collections
    assert np.all(clean.get_offsets()[:, 1] == 0.0)


def test_svg_output_is_stable_and_keeps_text():
    series = {"ss/sam_scaled": [(0.01, 0.5), (0.05, 0.8)]}
    first = line_plot(series, "TPR & FPR", "p", "rate")
    assert first == line_plot(series, "TPR & FPR", "p", "rate")
    root = ET.fromstring(first.encode("utf-8"))
    assert root.tag.endswith("svg")
    assert any(el.text == "TPR & FPR" for el in root.iter())


def test_pca_scatter_renders(rng):
    svg = pca_scatter(rng.standard_normal((12, 3)), np.arange(12) < 2, "PCA")
    assert ET.fromstring(svg.encode("utf-8")).tag.endswith("svg")
