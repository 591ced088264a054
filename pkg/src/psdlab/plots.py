"""SVG figures drawn with matplotlib's object API (no pyplot state).

Line plots for sweeps, scatter plots for the correlation study and the
TAC/weight-norm study, and a 2-D PCA scatter of a feature variant.
Rendering pins the SVG hash salt and drops the date so reruns write the
same bytes.
"""

import io
from typing import NamedTuple

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from psdlab.linalg import pca_fit

FIGSIZE = (6.4, 4.2)
SVG_RC = {"svg.hashsalt": "psdlab", "svg.fonttype": "none"}

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")
MARKERS = ("o", "s", "^", "D", "x")


class ScatterPoint(NamedTuple):
    x: float
    y: float
    color_key: str
    shape_key: str


def _keys(values) -> list[str]:
    """Distinct keys in first-seen order."""
    return list(dict.fromkeys(values))


def _axes(title: str, x_label: str, y_label: str):
    fig = Figure(figsize=FIGSIZE)
    ax = fig.add_subplot()
    ax.set(title=title, xlabel=x_label, ylabel=y_label)
    return fig, ax


def render_svg(fig: Figure) -> str:
    buf = io.StringIO()
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def line_figure(series: dict[str, list[tuple[float, float | None]]], title: str,
                x_label: str, y_label: str) -> Figure:
    """One line per series; points with a None y are dropped."""
    fig, ax = _axes(title, x_label, y_label)
    for i, (name, points) in enumerate(series.items()):
        defined = sorted((x, y) for x, y in points if y is not None)
        if not defined:
            continue
        xs, ys = zip(*defined)
        ax.plot(xs, ys, marker="o", markersize=4, color=PALETTE[i % len(PALETTE)], label=name)
    if ax.lines:
        ax.legend(loc="best", fontsize="small")
    return fig


def scatter_figure(points: list[ScatterPoint], title: str, x_label: str, y_label: str) -> Figure:
    """Marker colour encodes color_key and marker shape encodes shape_key."""
    fig, ax = _axes(title, x_label, y_label)
    colors = {k: PALETTE[i % len(PALETTE)] for i, k in enumerate(_keys(p.color_key for p in points))}
    markers = {k: MARKERS[i % len(MARKERS)] for i, k in enumerate(_keys(p.shape_key for p in points))}
    for color_key, shape_key in _keys((p.color_key, p.shape_key) for p in points):
        group = [p for p in points if p.color_key == color_key and p.shape_key == shape_key]
        label = color_key if color_key == shape_key else f"{color_key} / {shape_key}"
        ax.scatter([p.x for p in group], [p.y for p in group], s=16,
                   c=colors[color_key], marker=markers[shape_key], label=label)
    if points:
        ax.legend(loc="best", fontsize="small")
    return fig


def pca_figure(features: np.ndarray, poisoned: np.ndarray, title: str) -> Figure:
    """Features projected on their top two principal axes, clean vs poisoned."""
    centered = features - features.mean(axis=0)
    projection = pca_fit(centered, variance_target=1.0, max_dim=2).projection
    coords = centered @ projection
    if coords.shape[1] == 1:
        coords = np.column_stack([coords[:, 0], np.zeros(coords.shape[0])])
    points = [
        ScatterPoint(float(a), float(b), "poisoned" if flag else "clean", "poisoned" if flag else "clean")
        for (a, b), flag in zip(coords[:, :2], poisoned)
    ]
    # clean first so poisoned markers are drawn on top
    points.sort(key=lambda p: p.color_key == "poisoned")
    return scatter_figure(points, title, "PC 1", "PC 2")


def line_plot(series, title: str, x_label: str, y_label: str) -> str:
    return render_svg(line_figure(series, title, x_label, y_label))


def scatter_plot(points: list[ScatterPoint], title: str, x_label: str, y_label: str) -> str:
    return render_svg(scatter_figure(points, title, x_label, y_label))


def pca_scatter(features: np.ndarray, poisoned: np.ndarray, title: str) -> str:
    return render_svg(pca_figure(features, poisoned, title))
