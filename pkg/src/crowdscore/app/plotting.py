"""Report figures rendered to PNG files with the Agg backend."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no version/date metadata, so identical inputs give identical files
_PNG_META = {"Software": None}


def get_figure(width: float = 6.0, height: float = None):
    """Figure with readable default font sizes; height defaults to the golden ratio."""
    golden_ratio = (math.sqrt(5) - 1.0) / 2.0
    if not height:
        height = width * golden_ratio
    fig, ax = plt.subplots(figsize=(width, height), facecolor="w")
    ax.tick_params(labelsize=9)
    return fig, ax


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_sensitivity(results: Sequence, path, title: str = "") -> Path:
    """Box plot of agreement per crowd size with the mean overlaid."""
    fig, ax = get_figure()
    sizes = [r.crowd_size for r in results]
    ax.boxplot([r.agreement for r in results], positions=sizes, widths=0.6, showfliers=False)
    ax.plot(sizes, [r.mean for r in results], "o-", color="tab:red", ms=4, lw=1, label="mean")
    ax.set_xlabel("crowd size")
    ax.set_ylabel("agreement with ground truth")
    ax.set_title(title, fontsize=10)
    ax.legend(fontsize=8, frameon=False)
    return _save(fig, Path(path))


def plot_method_agreement(result, path, level: str = "patient") -> Path:
    """Grouped bars: percent agreement per aggregation method and scheme."""
    rows = [m for m in result.metrics if m["level"] == level and m["metric"] == "percent_agreement"]
    methods = list(dict.fromkeys(r["method"] for r in rows))
    schemes = list(dict.fromkeys(r["scheme"] for r in rows))
    fig, ax = get_figure()
    width = 0.8 / max(len(schemes), 1)
    x = np.arange(len(methods))
    for i, scheme in enumerate(schemes):
        vals = [next((r["value"] for r in rows if r["method"] == m and r["scheme"] == scheme), None) or 0.0
                for m in methods]
        ax.bar(x + i * width - 0.4 + width / 2, vals, width, label=f"{scheme}-class")
    ax.set_xticks(x)
    ax.set_xticklabels([m.upper() for m in methods])
    ax.set_ylim(0, 1)
    ax.set_ylabel(f"{level}-level agreement")
    ax.legend(fontsize=8, frameon=False)
    return _save(fig, Path(path))


def plot_confusion(pred: Sequence[int], truth: Sequence[int], n_classes: int, path, title: str = "") -> Path:
    """Heat map of crowd label versus ground truth counts."""
    m = np.zeros((n_classes, n_classes), dtype=int)
    for p, t in zip(pred, truth):
        m[t, p] += 1
    fig, ax = get_figure(4.5, 4.0)
    ax.imshow(m, cmap="Blues")
    letters = "ABCD"[:n_classes]
    ax.set_xticks(range(n_classes))
    ax.set_xticklabels(letters)
    ax.set_yticks(range(n_classes))
    ax.set_yticklabels(letters)
    ax.set_xlabel("crowd")
    ax.set_ylabel("truth")
    for i in range(n_classes):
        for j in range(n_classes):
            ax.text(j, i, str(m[i, j]), ha="center", va="center", fontsize=8,
                    color="white" if m[i, j] > m.max() / 2 else "black")
    ax.set_title(title, fontsize=10)
    return _save(fig, Path(path))


def plot_trust_distribution(trusts: Sequence[float], path, threshold: float = 0.6) -> Path:
    """Histogram of contributor trust scores with the gate marked."""
    fig, ax = get_figure()
    ax.hist(list(trusts), bins=np.linspace(0, 1, 21), color="tab:blue", edgecolor="white")
    ax.axvline(threshold, color="tab:red", ls="--", lw=1)
    ax.set_xlabel("trust score")
    ax.set_ylabel("contributors")
    return _save(fig, Path(path))


def pipeline_figures(result, out: Path) -> list:
    from ..core import Scheme, merge_classes

    files = [plot_method_agreement(result, out / "agreement_by_method.png")]
    for method, images in result.image_labels.items():
        pred = [merge_classes(r.label, Scheme.THREE).value for r in images.values()]
        truth = [merge_classes(result.truth[i], Scheme.THREE).value for i in images]
        files.append(plot_confusion(pred, truth, 3, out / f"confusion_{method}.png", method.upper()))
    return files
