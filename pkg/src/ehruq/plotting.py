"""Figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import ReliabilityBin  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # fixed metadata keeps repeated renders byte-stable
    "svg.hashsalt": "ehruq",
}


def _reliability_axes(ax, bins: Sequence[ReliabilityBin], title: str) -> None:
    lo = [b.lower for b in bins]
    width = [b.upper - b.lower for b in bins]
    acc = [b.accuracy or 0.0 for b in bins]
    ax.bar(lo, acc, width=width, align="edge", color="#4c72b0", edgecolor="white", label="accuracy")
    gap_bottom = [min(a, (b.mean_confidence or a)) for a, b in zip(acc, bins)]
    gap_height = [abs((b.mean_confidence or a) - a) if b.count else 0.0 for a, b in zip(acc, bins)]
    ax.bar(lo, gap_height, bottom=gap_bottom, width=width, align="edge",
           color="#dd8452", alpha=0.5, edgecolor="none", label="gap")
    ax.plot([0.5, 1.0], [0.5, 1.0], "k--", lw=0.8)
    ax.set_xlim(0.5, 1.0)
    ax.set_ylim(0.0, 1.0)
    ax.set_title(title)


def reliability_grid(
    tables: Mapping[str, Sequence[ReliabilityBin]],
    path: str | Path,
    suptitle: str | None = None,
    ncols: int = 5,
) -> Path:
    """One reliability diagram per entry of ``tables`` (task -> bins)."""
    n = len(tables)
    ncols = max(1, min(ncols, n))
    nrows = (n + ncols - 1) // ncols
    with plt.rc_context(RC):
        fig, axes = plt.subplots(nrows, ncols, figsize=(2.2 * ncols, 2.2 * nrows), squeeze=False)
        for ax, (name, bins) in zip(axes.flat, tables.items()):
            _reliability_axes(ax, bins, name)
        for ax in list(axes.flat)[n:]:
            ax.set_visible(False)
        for ax in axes[-1]:
            ax.set_xlabel("confidence")
        for ax in axes[:, 0]:
            ax.set_ylabel("accuracy")
        axes.flat[0].legend(loc="upper left", frameon=False)
        if suptitle:
            fig.suptitle(suptitle)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
        plt.close(fig)
    return path


def metric_bars(
    values: Mapping[str, Mapping[str, float | None]],
    metric: str,
    path: str | Path,
) -> Path:
    """Grouped bars: x = task, one bar per group (method/tasking)."""
    tasks = list(values)
    groups = list(dict.fromkeys(g for v in values.values() for g in v))
    width = 0.8 / max(1, len(groups))
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(tasks) * max(1, len(groups)) ** 0.5), 3.0))
        for i, g in enumerate(groups):
            ys = [values[t].get(g) for t in tasks]
            xs = [j + i * width for j, y in enumerate(ys) if y is not None]
            ax.bar(xs, [y for y in ys if y is not None], width=width, label=g)
        ax.set_xticks([j + 0.4 - width / 2 for j in range(len(tasks))])
        ax.set_xticklabels(tasks, rotation=45, ha="right")
        ax.set_ylabel(metric)
        ax.legend(frameon=False, ncol=2)
        fig.tight_layout()
        path = Path(path)
        fig.savefig(path, metadata={"Software": None} if path.suffix == ".png" else None)
        plt.close(fig)
    return path
