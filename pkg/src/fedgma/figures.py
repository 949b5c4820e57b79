"""Matplotlib rendering for the CLI report paths.

Every figure is written next to its delimited twin: surface heatmaps
accompany the grid CSVs, accuracy curves the metrics CSVs, and the
client digit histogram the partition table.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .surfaces import Surface, surface_grid


def save_surface_panels(named_surfaces: dict[str, Surface], path,
                        resolution: int = 201) -> None:
    fig, axes = plt.subplots(1, len(named_surfaces),
                             figsize=(4.2 * len(named_surfaces), 3.6),
                             constrained_layout=True)
    if len(named_surfaces) == 1:
        axes = [axes]
    for ax, (name, s) in zip(axes, named_surfaces.items()):
        t1, t2, v = surface_grid(s, resolution)
        im = ax.pcolormesh(t1, t2, v, shading="auto", cmap="viridis")
        ax.set_title(name)
        ax.set_xlabel(r"$\theta_1$")
        ax.set_ylabel(r"$\theta_2$")
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_metrics_curves(runs: dict, path, metric: str = "ood_accuracy") -> None:
    """Per-seed curves plus the mean when several runs are given.

    ``runs`` maps a label (e.g. the seed) to a list of MetricsRow.
    """
    fig, ax = plt.subplots(figsize=(6.4, 4.0), constrained_layout=True)
    curves = []
    for label, rows in runs.items():
        xs = [r.round for r in rows]
        ys = [getattr(r, metric) for r in rows]
        curves.append(ys)
        ax.plot(xs, ys, alpha=0.6 if len(runs) > 1 else 1.0, label=f"seed {label}")
    if len(runs) > 1 and curves and len({len(c) for c in curves}) == 1:
        mean = np.mean(np.array(curves), axis=0)
        ax.plot(xs, mean, color="black", linewidth=2.0, label="mean")
    ax.set_xlabel("communication round")
    ax.set_ylabel(metric.replace("_", " "))
    if metric.endswith("accuracy"):
        ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_partition_histogram(hist: np.ndarray, path) -> None:
    """Stacked digit counts per client; hist is (clients, 10)."""
    hist = np.asarray(hist)
    fig, ax = plt.subplots(figsize=(6.4, 4.0), constrained_layout=True)
    bottom = np.zeros(hist.shape[0])
    xs = np.arange(hist.shape[0])
    cmap = plt.get_cmap("tab10")
    for digit in range(hist.shape[1]):
        ax.bar(xs, hist[:, digit], bottom=bottom, color=cmap(digit), label=str(digit))
        bottom += hist[:, digit]
    ax.set_xlabel("client")
    ax.set_ylabel("samples")
    ax.set_xticks(xs)
    ax.legend(title="digit", fontsize=7, ncol=2)
    fig.savefig(path, dpi=150)
    plt.close(fig)
