"""Matplotlib rendering for the report paths.

Figures are written next to the delimited outputs they mirror (density
CSVs, the stats table); nothing downstream depends on them, so commands can
switch them off without losing data.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .structure import LocationDensity


def save_density_figure(density: LocationDensity, path: str | Path, title: str = "") -> None:
    """Histogram of main-sentence locations with a rug along the baseline."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    edges = density.bin_edges
    widths = [r - l for l, r in zip(edges[:-1], edges[1:])]
    ax.bar(edges[:-1], density.mass, width=widths, align="edge",
           color="#4878a8", edgecolor="white")
    if density.rug:
        ax.plot(density.rug, [-0.015] * len(density.rug), "|", color="black",
                markersize=8, clip_on=False)
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("relative sentence location")
    ax.set_ylabel("mass")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_learning_curve(report: dict, path: str | Path) -> None:
    """Mean AUROC with std error bars per (model, test set) over train size."""
    sizes = report["train_sizes"]
    fig, ax = plt.subplots(figsize=(6, 4))
    markers = ("o", "s", "^", "d")
    idx = 0
    for tag in report["model_tags"]:
        for ts in report["test_sets"]:
            means, stds = [], []
            for row in report["rows"]:
                cell = row["models"][tag]["cells"][ts]
                means.append(cell["auroc_mean"])
                stds.append(cell["auroc_std"])
            ax.errorbar(sizes, means, yerr=stds, marker=markers[idx % len(markers)],
                        capsize=3, label=f"{tag} / {ts}")
            idx += 1
    ax.set_xlabel("train articles")
    ax.set_ylabel("AUROC")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
