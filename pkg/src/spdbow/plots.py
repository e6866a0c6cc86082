"""Figure rendering for the report path.

Figures are rendered straight to files with the Agg backend (no display);
they accompany the CSV reports, which remain the canonical outputs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_confusion_matrix(matrix, labels, path) -> None:
    """Render a confusion-matrix heatmap with per-cell counts."""
    matrix = np.asarray(matrix)
    n = len(labels)
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * n, 1.0 + 0.6 * n))
    im = ax.imshow(matrix, cmap="Blues")
    ax.set_xticks(range(n), labels, rotation=45, ha="right")
    ax.set_yticks(range(n), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    threshold = matrix.max() / 2 if matrix.max() > 0 else 0.5
    for i in range(n):
        for j in range(n):
            color = "white" if matrix[i, j] > threshold else "black"
            ax.text(j, i, str(int(matrix[i, j])), ha="center", va="center", color=color)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={"Software": None})
    plt.close(fig)


def save_dispersion_curve(dispersions, path) -> None:
    """Render the per-iteration k-means dispersion curve."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(dispersions) + 1), dispersions, marker="o")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean squared dispersion")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={"Software": None})
    plt.close(fig)
