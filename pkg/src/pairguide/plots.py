"""SVG plot helpers for run artifacts."""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def histogram(samples: np.ndarray, path: Path, title: str = "",
              density_fn=None, coord: int = 0):
    samples = np.atleast_2d(samples)
    values = samples[:, coord]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(values, bins=60, density=True, alpha=0.7, label="samples")
    if density_fn is not None:
        grid = np.linspace(values.min() - 1, values.max() + 1, 400)
        ax.plot(grid, density_fn(grid), "k-", lw=1.2, label="target density")
        ax.legend(frameon=False, fontsize=8)
    ax.set_title(title, fontsize=9)
    ax.set_xlabel(f"coordinate {coord}")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def sweep_curve(lambdas, means, std_errors, path: Path, title: str = "",
                prediction=None):
    lambdas = np.asarray(lambdas)
    means = np.atleast_2d(np.asarray(means))
    ses = np.atleast_2d(np.asarray(std_errors))
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for c in range(means.shape[1]):
        ax.errorbar(lambdas, means[:, c], yerr=3 * ses[:, c], marker="o",
                    capsize=3, label=f"coord {c}")
    if prediction is not None:
        ax.plot(lambdas, prediction, "k--", lw=1, label="closed form")
    ax.set_xlabel("guidance strength")
    ax.set_ylabel("endpoint mean")
    ax.set_title(title, fontsize=9)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def displacement_bars(labels, per_coord_values, path: Path, title: str = ""):
    per_coord = np.atleast_2d(np.asarray(per_coord_values))
    n_groups, d = per_coord.shape
    x = np.arange(d)
    width = 0.8 / n_groups
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for g, label in enumerate(labels):
        ax.bar(x + g * width, per_coord[g], width, label=label)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([f"coord {i}" for i in range(d)])
    ax.set_ylabel("mean |displacement|")
    ax.set_title(title, fontsize=9)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
