"""Figure rendering for the CLI report paths.

Every plot is written straight to a file (Agg backend); the CSV/JSON data
next to it remains the authoritative output.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .activations import ActivationSpec, shape_series


def render_shapes(specs: list[ActivationSpec], path, lo: float = -5.0, hi: float = 5.0,
                  n: int = 501, reference: ActivationSpec | None = None) -> None:
    """Overlay activation curves; the reference (usually relu) is dotted black."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for spec in specs:
        xs, ys = shape_series(spec, lo, hi, n)
        label = spec.family
        if spec.alpha is not None:
            label += f" a={spec.alpha:g}"
        if spec.family == "pssilu":
            label += f" b={spec.beta:g}"
        ax.plot(xs, ys, label=label)
    if reference is not None:
        xs, ys = shape_series(reference, lo, hi, n)
        ax.plot(xs, ys, "k:", label=reference.family)
    ax.axhline(0.0, color="gray", lw=0.5)
    ax.axvline(0.0, color="gray", lw=0.5)
    ax.set_xlabel("x")
    ax.set_ylabel("activation(x)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_history(history: list[dict], path) -> None:
    """Accuracy/loss trajectories plus the shape-parameter traces."""
    epochs = [row["epoch"] for row in history]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(epochs, [row["clean_acc"] for row in history], label="clean acc")
    axes[0].plot(epochs, [row["pgd_acc"] for row in history], label="attacked acc")
    axes[0].plot(epochs, [row["loss"] for row in history], label="train loss", alpha=0.6)
    axes[0].set_xlabel("epoch")
    axes[0].legend(fontsize=8)
    alphas = [row["alpha"] for row in history if row["alpha"] != ""]
    betas = [row["beta"] for row in history if row["beta"] != ""]
    if alphas:
        axes[1].plot(epochs[: len(alphas)], alphas, label="alpha")
    if betas:
        axes[1].plot(epochs[: len(betas)], betas, label="beta")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("shape parameter")
    if alphas or betas:
        axes[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sweep(rows: list[dict], path, param_key: str = "param",
                 acc_key: str = "square_acc", radius_key: str = "mean_min_radius") -> None:
    """Robust accuracy (blue, left axis) and mean radius (red, right axis) vs parameter."""
    params = sorted({row[param_key] for row in rows})

    def per_param(key):
        return [np.mean([r[key] for r in rows if r[param_key] == p]) for p in params]

    fig, ax1 = plt.subplots(figsize=(6, 4))
    ax1.plot(params, per_param(acc_key), "o-", color="tab:blue")
    ax1.set_xlabel(param_key)
    ax1.set_ylabel(acc_key, color="tab:blue")
    if radius_key and radius_key in rows[0]:
        ax2 = ax1.twinx()
        ax2.plot(params, per_param(radius_key), "s--", color="tab:red")
        ax2.set_ylabel(radius_key, color="tab:red")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
