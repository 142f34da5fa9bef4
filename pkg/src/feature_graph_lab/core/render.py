"""SVG charts for the aggregate tables (matplotlib, Agg backend)."""

from __future__ import annotations

import logging
from collections import defaultdict
from pathlib import Path
from typing import Any

import numpy as np

from ..models import UNREACHABLE_HOPS
from .expharness import EdgeCell, HopsHeatmap

logger = logging.getLogger(__name__)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams.update({"svg.hashsalt": "feature-graph-lab", "axes.unicode_minus": False})
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    logger.debug(f"Wrote {path}")
    return path


def render_edges_chart(table: list[EdgeCell], path: Path) -> Path:
    """One line per (depth, interaction edge count): mean MAE vs non-interaction edges."""
    plt = _pyplot()
    series: dict[tuple[int, int], list[EdgeCell]] = defaultdict(list)
    for cell in table:
        series[(cell.layers, cell.interaction_edges)].append(cell)

    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    for (layers, interaction), cells in sorted(series.items()):
        cells.sort(key=lambda c: c.non_interaction_edges)
        ax.errorbar(
            [c.non_interaction_edges for c in cells],
            [c.mean_mae for c in cells],
            yerr=[0.0 if np.isnan(c.std_err) else c.std_err for c in cells],
            marker="o",
            capsize=3,
            label=f"L={layers}, {interaction} interaction edges",
        )
    ax.set_xlabel("non-interaction edges")
    ax.set_ylabel("mean test MAE")
    ax.legend()
    try:
        return _save(fig, path)
    finally:
        plt.close(fig)


def render_hops_heatmaps(heatmaps: dict[int, HopsHeatmap], path: Path) -> Path:
    """One panel per depth; absent cells are left blank."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, max(len(heatmaps), 1), figsize=(4 * max(len(heatmaps), 1), 3.6), squeeze=False)
    for ax, (layers, heatmap) in zip(axes[0], sorted(heatmaps.items())):
        grid = heatmap.matrix()
        labels = ["inf" if h == UNREACHABLE_HOPS else str(h) for h in heatmap.axis]
        image = ax.imshow(np.ma.masked_invalid(grid), cmap="viridis", origin="lower")
        ax.set_xticks(range(len(labels)), labels)
        ax.set_yticks(range(len(labels)), labels)
        ax.set_xlabel("hops between second pair")
        ax.set_ylabel("hops between first pair")
        ax.set_title(f"L={layers}")
        for (i, j), value in np.ndenumerate(grid):
            if not np.isnan(value):
                ax.text(j, i, f"{value:.3f}", ha="center", va="center", fontsize=7, color="white")
        fig.colorbar(image, ax=ax, shrink=0.8)
    try:
        return _save(fig, path)
    finally:
        plt.close(fig)


def render_scaling_chart(rows: list[dict[str, Any]], path: Path) -> Path:
    """MAE per graph label vs number of pairwise terms, with the noise floor and linear baseline."""
    plt = _pyplot()
    fixed = {"p", "d", "layers", "exceeded"}
    labels = sorted({k for row in rows for k in row if k not in fixed})
    fig, ax = plt.subplots(figsize=(6, 4), constrained_layout=True)
    for label in labels:
        points = sorted((row["p"], row[label]) for row in rows if label in row)
        style = "--" if label in ("noise_floor", "linear_baseline") else "-"
        ax.plot([p for p, _ in points], [v for _, v in points], style, marker="o", label=label)
    ax.set_xlabel("pairwise terms p")
    ax.set_ylabel("test MAE")
    ax.set_yscale("log")
    ax.legend()
    try:
        return _save(fig, path)
    finally:
        plt.close(fig)
