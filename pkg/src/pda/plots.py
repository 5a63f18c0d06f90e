"""Figure rendering for the CLI report paths.

The engine emits delimited plot data; these helpers render the matching
matplotlib figures next to it. Only the CLI imports this module.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_GROUP_COLORS = {
    "real": "tab:green",
    "known_fake": "tab:red",
    "fake": "tab:red",
    "reference": "0.6",
}


def _color(i: int, group: str) -> str:
    return _GROUP_COLORS.get(group, f"C{i % 10}")


def distance_histogram(
    path: str | Path,
    values_by_group: dict[str, np.ndarray],
    tau: float | None = None,
    title: str = "kNN distance to reference",
) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    finite = np.concatenate([np.asarray(v, dtype=float) for v in values_by_group.values()])
    finite = finite[np.isfinite(finite)]
    bins = np.histogram_bin_edges(finite, bins=40) if finite.size else 20
    for i, (group, values) in enumerate(values_by_group.items()):
        ax.hist(
            np.asarray(values, dtype=float),
            bins=bins,
            alpha=0.55,
            label=group,
            color=_color(i, group),
        )
    if tau is not None:
        ax.axvline(tau, color="k", linestyle="--", linewidth=1.2, label=f"tau = {tau:.3g}")
    ax.set_xlabel("distance to k-th nearest reference point")
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def embedding_scatter(
    path: str | Path,
    points: np.ndarray,
    labels: Sequence[str] | None = None,
    ref_points: np.ndarray | None = None,
    title: str = "embedded feature space",
) -> None:
    fig, ax = plt.subplots(figsize=(6, 6))
    if ref_points is not None:
        ref_points = np.asarray(ref_points)
        ax.scatter(
            ref_points[:, 0], ref_points[:, 1], s=4, c="0.8", label="reference", rasterized=True
        )
    points = np.asarray(points)
    if labels is None:
        ax.scatter(points[:, 0], points[:, 1], s=6)
    else:
        labels = list(labels)
        for i, group in enumerate(dict.fromkeys(labels)):
            sel = [j for j, lab in enumerate(labels) if lab == group]
            ax.scatter(
                points[sel, 0], points[sel, 1], s=6, label=group, color=_color(i + 1, group)
            )
    ax.set_xlabel("z1")
    ax.set_ylabel("z2")
    ax.set_title(title)
    ax.legend(fontsize=8, markerscale=2)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def sweep_curve(path: str | Path, axis: str, cells, title: str | None = None) -> None:
    xs, accs, taus = [], [], []
    for c in cells:
        if c.result is None:
            continue
        xs.append(str(c.value))
        accs.append(c.result.acc)
        taus.append(c.tau)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(xs, accs, "o-", color="tab:blue", label="accuracy")
    ax.set_xlabel(axis)
    ax.set_ylabel("accuracy (%)", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(xs, taus, "s--", color="tab:orange", label="tau")
    ax2.set_ylabel("tau", color="tab:orange")
    ax.set_title(title or f"sweep over {axis}")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def spectrum_heatmap(path: str | Path, matrix: np.ndarray,
                     title: str = "average log magnitude spectrum") -> None:
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(np.asarray(matrix), cmap="magma")
    fig.colorbar(im, ax=ax, fraction=0.046)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
