"""Matplotlib renderings of the CLI reports, written next to the CSV output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_history(history, path) -> None:
    fig, ax1 = plt.subplots(figsize=(7, 4))
    epochs = np.arange(len(history.train_loss))
    ax1.plot(epochs, history.train_loss, color="tab:red", label="train loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss", color="tab:red")
    ax2 = ax1.twinx()
    ax2.plot(epochs, history.val_auc, color="tab:blue", label="val mean AUC")
    ax2.axvline(history.best_epoch, color="gray", ls="--", lw=0.8)
    ax2.set_ylabel("val mean AUC", color="tab:blue")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_subset_grid(grid, path) -> None:
    labels = ["+".join(names) for _, names, _ in grid.entries]
    values = [rep.mean_auc for _, _, rep in grid.entries]
    order = np.argsort(values)
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(labels) + 1.5))
    ax.barh(np.arange(len(labels)), np.array(values)[order], color="tab:blue")
    ax.set_yticks(np.arange(len(labels)))
    ax.set_yticklabels([labels[i] for i in order], fontsize=8)
    ax.set_xlabel("mean test AUC")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_shapley_values(estimate, path) -> None:
    order = np.argsort(estimate.values)
    fig, ax = plt.subplots(figsize=(7, 0.3 * len(estimate.players) + 1.5))
    ax.barh(np.arange(len(estimate.players)), np.asarray(estimate.values)[order],
            color="tab:orange")
    ax.set_yticks(np.arange(len(estimate.players)))
    ax.set_yticklabels([estimate.players[i] for i in order], fontsize=8)
    ax.set_xlabel(f"Shapley value ({estimate.estimator})")
    ax.axvline(0.0, color="black", lw=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_convergence(estimate, path) -> None:
    if estimate.trace is None:
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = np.arange(1, estimate.trace.shape[0] + 1)
    for i, name in enumerate(estimate.players):
        ax.plot(steps, estimate.trace[:, i], lw=1.0, label=name)
    unit = "squares" if estimate.estimator == "stratified" else "samples"
    ax.set_xlabel(unit)
    ax.set_ylabel("partial Shapley estimate")
    if len(estimate.players) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_map(shap_map, path) -> None:
    G = len(shap_map.groups)
    ncol = min(G, 3)
    nrow = (G + ncol - 1) // ncol
    fig, axes = plt.subplots(nrow, ncol, figsize=(4 * ncol, 3.2 * nrow), squeeze=False)
    vmax = np.abs(shap_map.values).max() or 1.0
    for g, name in enumerate(shap_map.groups):
        ax = axes[g // ncol][g % ncol]
        sc = ax.scatter(shap_map.lon, shap_map.lat, c=shap_map.values[:, g],
                        cmap="RdBu_r", vmin=-vmax, vmax=vmax, s=8)
        ax.set_title(f"{name} ({shap_map.species})", fontsize=9)
        fig.colorbar(sc, ax=ax, shrink=0.8)
    for g in range(G, nrow * ncol):
        axes[g // ncol][g % ncol].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_baseline_comparison(comparison, path) -> None:
    methods = []
    for r in comparison.rows:
        if r["method"] not in methods:
            methods.append(r["method"])
    subsets = []
    for r in comparison.rows:
        if r["subset_bits"] not in subsets:
            subsets.append(r["subset_bits"])
    fig, ax = plt.subplots(figsize=(1.4 * len(subsets) + 3, 4))
    width = 0.8 / len(methods)
    x = np.arange(len(subsets))
    for k, method in enumerate(methods):
        vals = [next(r["mean_auc"] for r in comparison.rows
                     if r["method"] == method and r["subset_bits"] == s)
                for s in subsets]
        ax.bar(x + k * width, vals, width, label=method)
    ax.set_xticks(x + 0.4)
    ax.set_xticklabels(subsets, rotation=45, fontsize=7)
    ax.set_ylabel("mean test AUC")
    ax.set_ylim(0.4, 1.0)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
