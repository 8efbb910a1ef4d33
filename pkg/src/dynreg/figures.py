"""Matplotlib renderings of correlation heatmaps, training curves, metrics.

Everything draws on an explicit Agg canvas (no pyplot state) and saves PNGs
with a fixed metadata dict, so repeated runs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

PNG_METADATA = {"Software": "dynreg"}


def _new_figure(width=6.4, height=4.8):
    fig = Figure(figsize=(width, height), dpi=110)
    FigureCanvasAgg(fig)
    return fig


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    return path


def render_heatmap(matrix, path, clip=None, title=None) -> Path:
    """Diverging-color heatmap PNG, symmetric around zero."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise ValueError("heatmap needs a non-empty 2-D matrix")
    if not np.isfinite(m).all():
        raise ValueError("heatmap matrix contains non-finite entries")
    if clip is not None:
        if clip <= 0:
            raise ValueError("clip threshold must be positive")
        m = np.clip(m, -clip, clip)
    vmax = float(np.abs(m).max()) or 1.0
    fig = _new_figure(6.0, 5.0)
    ax = fig.subplots()
    im = ax.imshow(m, cmap="RdBu_r", vmin=-vmax, vmax=vmax, interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.85)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def render_history(history, path, title=None) -> Path:
    """Training-loss components and validation total per epoch."""
    h = np.asarray(history, dtype=float)
    if h.ndim != 2 or h.shape[0] == 0 or h.shape[1] != 5:
        raise ValueError("history must be rows of (epoch, mae, res, nll, val_total)")
    fig = _new_figure()
    ax = fig.subplots()
    epochs = h[:, 0]
    for col, label in ((1, "train mae"), (2, "train res"), (3, "train nll"), (4, "val total")):
        ax.plot(epochs, h[:, col], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def render_metrics(table, path, title=None) -> Path:
    """Per-horizon-step MAE and RMSE curves."""
    steps = np.arange(1, table.horizon + 1)
    fig = _new_figure()
    ax = fig.subplots()
    ax.plot(steps, table.mae, marker="o", label="MAE")
    ax.plot(steps, table.rmse, marker="s", label="RMSE")
    ax.set_xlabel("forecast step")
    ax.set_ylabel("error")
    ax.set_xticks(steps)
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    if title:
        ax.set_title(title)
    return _save(fig, path)
