"""Matplotlib renderers for the report path. All figures are written to files."""

from __future__ import annotations

import math
from typing import Mapping, Sequence


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path):
    fig.savefig(path, dpi=120, bbox_inches="tight")
    _plt().close(fig)


def feature_importance_figure(rankings: Mapping[str, "CorrelationRanking"], path) -> None:
    """Horizontal bar chart of |R| per feature, one panel per split."""
    plt = _plt()
    fig, axes = plt.subplots(1, len(rankings), figsize=(5.0 * len(rankings), 3.6),
                             squeeze=False)
    for ax, (label, ranking) in zip(axes[0], sorted(rankings.items())):
        names = [name for name, _ in ranking.entries][::-1]
        values = [r for _, r in ranking.entries][::-1]
        ax.barh(names, values, color="#46608c")
        ax.set_xlim(0.0, 1.0)
        ax.set_xlabel("|R| vs ln(kf)")
        ax.set_title(f"split {label}")
    fig.suptitle("Feature correlation ranking")
    _save(fig, path)


def actual_vs_predicted_figure(y_true: Sequence[float], y_pred: Sequence[float],
                               title: str, path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4.4, 4.0))
    ax.scatter(y_true, y_pred, s=18, alpha=0.7, color="#46608c", edgecolors="none")
    lo = min(min(y_true), min(y_pred))
    hi = max(max(y_true), max(y_pred))
    ax.plot([lo, hi], [lo, hi], color="#888888", linewidth=1, linestyle="--")
    ax.set_xlabel("actual ln(kf)")
    ax.set_ylabel("predicted ln(kf)")
    ax.set_title(title)
    _save(fig, path)


def stage_breakdown_figure(fractions: Mapping[str, float], path) -> None:
    """Pie of pipeline stage shares."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(4.4, 4.0))
    labels = list(fractions)
    values = [fractions[k] for k in labels]
    colors = ["#343434", "#a0a0a0", "#d3d3d3", "#f0f0f0"][:len(values)]
    ax.pie(values, labels=labels, autopct="%.0f%%", colors=colors,
           textprops={"fontsize": 9})
    ax.set_title("Pipeline inference time by stage")
    _save(fig, path)


def batch_trend_figure(reports: Sequence["MetricsReport"], path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    idx = range(1, len(reports) + 1)
    ax.plot(idx, [r.mae for r in reports], marker="o", label="MAE", color="#46608c")
    r2s = [r.r2 for r in reports]
    if all(not math.isnan(v) for v in r2s):
        ax.plot(idx, r2s, marker="s", label="R2", color="#b0583c")
    ax.set_xlabel("test batch")
    ax.set_ylabel("metric value")
    ax.set_title("Per-batch accuracy trend")
    ax.legend()
    _save(fig, path)


def sweep_objective_figure(values: Sequence[float], objective: str, path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(range(len(values)), values, marker="o", color="#46608c")
    ax.set_xlabel("trial")
    ax.set_ylabel(objective)
    ax.set_title("Sweep objective per trial")
    _save(fig, path)
