"""Figure rendering for evaluation and training reports.

All plots go straight to PNG files (Agg backend, no display), sitting next
to the JSON/CSV outputs they illustrate.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .corpus import CLASS_ORDER  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_threshold_curve(curve: Sequence[tuple[float, float]],
                         path: str | Path) -> Path:
    thresholds = [t for t, _ in curve]
    accs = [a for _, a in curve]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(thresholds, accs, marker="o", markersize=3)
    ax.set_xlabel("decision threshold")
    ax.set_ylabel("cell-wise accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_per_label_accuracy(values: Sequence[float], path: str | Path,
                            names: Optional[Sequence[str]] = None) -> Path:
    if names is None:
        names = [c.value for c in CLASS_ORDER][:len(values)]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(range(len(values)), values)
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(names, rotation=45, ha="right")
    ax.set_ylabel("per-label accuracy")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, axis="y", alpha=0.3)
    return _save(fig, path)


def plot_loss_curve(losses: Sequence[float], path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(losses) + 1), losses, marker="o", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)
