"""Figures for run outputs. Everything here renders to files (Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .goalposts import SolveMatrix  # noqa: E402
from .rewards import LEMMA, LIFT, RewardSpec  # noqa: E402


def plot_reward_curves(path: str | Path, specs: Mapping[str, RewardSpec] | None = None) -> Path:
    specs = specs or {"lemma": LEMMA, "lift": LIFT}
    p = np.linspace(0, 1, 1001)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name, spec in specs.items():
        ax.plot(p, [spec(float(v)).value for v in p], label=name)
    ax.axhline(0, color="0.8", lw=0.8)
    ax.set_xlabel("estimated pass rate p")
    ax.set_ylabel("reward")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_metric_series(
    path: str | Path,
    series: Mapping[tuple[int, str], Sequence[tuple[int, float]]],
    names: Sequence[str],
) -> Path:
    """One panel per metric name, one line per seed."""
    names = [n for n in names if any(k[1] == n for k in series)]
    fig, axes = plt.subplots(len(names) or 1, 1, figsize=(6, 2.2 * max(len(names), 1)), squeeze=False)
    for ax, name in zip(axes[:, 0], names):
        for (seed, metric), pts in sorted(series.items()):
            if metric == name and pts:
                steps, vals = zip(*pts)
                ax.plot(steps, vals, marker=".", label=f"seed {seed}")
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("global step", fontsize=8)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_solve_matrix(path: str | Path, matrix: SolveMatrix, seed: int | None = None, only_solved: bool = True) -> Path:
    """Goalpost x checkpoint heatmap; ``seed=None`` plots the union across seeds."""
    grid = np.asarray(matrix.grid(seed), dtype=float).reshape(len(matrix.goalpost_ids), len(matrix.checkpoints))
    labels = list(matrix.goalpost_ids)
    if only_solved and grid.size:
        keep = grid.any(axis=1)
        grid, labels = grid[keep], [g for g, k in zip(labels, keep) if k]
    fig, ax = plt.subplots(figsize=(max(4, 0.25 * len(matrix.checkpoints) + 2), max(2, 0.3 * len(labels) + 1)))
    if grid.size:
        ax.imshow(grid, aspect="auto", cmap="Greens", vmin=0, vmax=1, interpolation="nearest")
        ax.set_yticks(range(len(labels)), labels, fontsize=7)
        ax.set_xticks(range(len(matrix.checkpoints)), [str(t) for t in matrix.checkpoints], fontsize=7, rotation=90)
    else:
        ax.text(0.5, 0.5, "no goalpost solved", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("checkpoint")
    ax.set_title("union across seeds" if seed is None else f"seed {seed}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_pass_at_k(path: str | Path, ks: Sequence[int], averages: Sequence[float]) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(list(ks), list(averages), marker="o")
    ax.set_xscale("log")
    ax.set_xlabel("k")
    ax.set_ylabel("mean pass@k")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
