"""Figure rendering for evaluation reports (files only, no display)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# Metadata-free PNGs so identical inputs give identical bytes.
_SAVE_KW = {"dpi": 100, "metadata": {"Software": None}}

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def error_heatmap(
    depth: np.ndarray, gt: np.ndarray, path: str | Path, vmax: float | None = None, title: str = ""
) -> None:
    """Absolute depth error as a heat map; brighter means larger error, grey means no estimate."""
    err = np.abs(depth - gt)
    ok = np.isfinite(err)
    if vmax is None:
        vmax = float(np.quantile(err[ok], 0.99)) if ok.any() else 1.0
        vmax = vmax if vmax > 0 else 1.0
    cmap = plt.get_cmap("inferno").copy()
    cmap.set_bad("0.5")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.3))
        im = ax.imshow(np.ma.masked_invalid(err), cmap=cmap, vmin=0.0, vmax=vmax, interpolation="nearest")
        ax.set_axis_off()
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="|error|")
        fig.tight_layout()
        _save(fig, path)


def sparsification_plot(curves: Sequence[tuple[str, np.ndarray, np.ndarray]], path: str | Path) -> None:
    """MAE against retained density, one line per ``(label, density, mae)``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        for label, density, curve in curves:
            ax.plot(density, curve, marker="o", markersize=2.5, linewidth=1.2, label=label)
        ax.set_xlabel("density")
        ax.set_ylabel("MAE")
        ax.set_xlim(0.0, 1.0)
        ax.set_ylim(bottom=0.0)
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def loss_trace_plot(trace: Sequence[dict], path: str | Path) -> None:
    epochs = [row["epoch"] for row in trace]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        for key, label in (("L", "total"), ("L_d", "depth"), ("L_c", "coverage"), ("L_r", "radius")):
            ax.plot(epochs, [row[key] for row in trace], linewidth=1.2, label=label)
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
