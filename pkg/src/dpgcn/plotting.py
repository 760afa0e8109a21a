"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def pca2(x: np.ndarray) -> np.ndarray:
    x = x - x.mean(0)
    if not np.any(x):
        return np.zeros((x.shape[0], 2))
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    out = u[:, :2] * s[:2]
    if out.shape[1] < 2:
        out = np.hstack([out, np.zeros((out.shape[0], 1))])
    return out


def plot_history(rows: list[dict], path):
    ep = [r["epoch"] for r in rows]
    fig, ax = plt.subplots(1, 2, figsize=(9, 3.4))
    ax[0].plot(ep, [r["loss"] for r in rows], color="k")
    ax[0].set_xlabel("epoch")
    ax[0].set_ylabel("train loss")
    ax[0].set_yscale("log")
    ax[1].plot(ep, [r["test_acc"] for r in rows], label="accuracy")
    ax[1].plot(ep, [r["test_macro_f1"] for r in rows], label="macro F1")
    ax[1].set_xlabel("epoch")
    ax[1].set_ylim(0, 1.02)
    ax[1].legend(frameon=False)
    return _save(fig, path)


def plot_ablation(rows: list[dict], path):
    means = [r for r in rows if r["seed"] == "mean"]
    per_seed = [r for r in rows if r["seed"] != "mean"]
    names = [r["variant"] for r in means]
    fig, ax = plt.subplots(figsize=(6.5, 3.4))
    ax.bar(range(len(names)), [r["macro_f1"] for r in means], color="0.75", edgecolor="k")
    for i, v in enumerate(names):
        ys = [r["macro_f1"] for r in per_seed if r["variant"] == v]
        ax.plot([i] * len(ys), ys, "k.", ms=4)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("macro F1 (test)")
    ax.set_ylim(0, 1.02)
    return _save(fig, path)


def plot_mirror_embeddings(embeddings: dict, clusters: dict, path, half: int = 34):
    """One panel per variant: 2-D PCA of node representations, coloured by cluster id,
    with each mirror pair joined by a line."""
    fig, axes = plt.subplots(1, len(embeddings), figsize=(4.2 * len(embeddings), 4))
    axes = np.atleast_1d(axes)
    for ax, (name, emb) in zip(axes, embeddings.items()):
        p = pca2(emb)
        for i in range(half):
            ax.plot(p[[i, i + half], 0], p[[i, i + half], 1], color="0.85", lw=0.6, zorder=0)
        ax.scatter(p[:, 0], p[:, 1], c=clusters[name], cmap="tab10", vmin=0, vmax=9, s=28,
                   edgecolors="k", linewidths=0.3)
        for i, (x, y) in enumerate(p):
            ax.annotate(str(i), (x, y), fontsize=5, xytext=(2, 2), textcoords="offset points")
        ax.set_title(name)
        ax.set_xticks([])
        ax.set_yticks([])
    return _save(fig, path)
