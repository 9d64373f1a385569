"""Matplotlib figure rendering for CLI reports. Headless (Agg) only."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .datamodel import ExpressionLabel


def save_sweep_figure(rows: list[tuple[int, float]], path, strategy: str = "") -> None:
    """Window-size sweep curve; marks the best window."""
    windows = [r[0] for r in rows]
    scores = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(windows, scores, marker="o", markersize=3)
    if rows:
        best = max(rows, key=lambda r: r[1])
        ax.axvline(best[0], color="tab:red", linestyle=":", linewidth=1)
        ax.annotate(f"best w={best[0]}", (best[0], best[1]), textcoords="offset points", xytext=(6, -4))
    ax.set_xlabel("window (frames)")
    ax.set_ylabel("macro F1")
    if strategy:
        ax.set_title(f"{strategy} smoothing sweep")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_report_figure(report: dict, path) -> None:
    """Per-class F1 bars with the macro mean as a reference line."""
    per_class = report["per_class"]
    names = [ExpressionLabel(i).name.capitalize() for i in range(len(per_class))]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(names, per_class, color="tab:blue")
    ax.axhline(report["macro_f1"], color="tab:red", linestyle=":", linewidth=1,
               label=f"macro F1 = {report['macro_f1']:.4f}")
    ax.set_ylim(0, 1)
    ax.set_ylabel("F1")
    ax.tick_params(axis="x", rotation=45)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_history_figure(history: list[dict], path) -> None:
    """Train loss and validation macro-F1 per epoch on twin axes."""
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [h["train_loss"] for h in history], color="tab:blue", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(epochs, [h["val_macro_f1"] for h in history], color="tab:red", label="val macro F1")
    ax2.set_ylabel("val macro F1", color="tab:red")
    ax2.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
