"""SVG figures: the focal-loss curve family and per-run histograms."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluator import Histogram  # noqa: E402
from .losses import LossKind, LossSpec, focal_value  # noqa: E402

# Fixed hash salt and no date stamp keep the SVG output byte-stable.
matplotlib.rcParams["svg.hashsalt"] = "focallab"
_SVG_META = {"Date": None, "Creator": "focallab"}

PARTITION_COLORS = {
    "correct": "tab:green", "incorrect": "tab:red",
    "correct_easy": "tab:green", "correct_hard": "tab:olive",
    "incorrect_easy": "tab:red", "incorrect_hard": "tab:purple",
}
MARKER_COLORS = {"guess": "tab:blue", "sure": "tab:red"}


def focal_curves(gammas, n_points: int = 999) -> tuple[np.ndarray, dict[float, np.ndarray]]:
    p = np.linspace(0.0, 1.0, n_points + 2)[1:-1]
    probs = np.stack([p, 1.0 - p], axis=1)
    labels = np.zeros(len(p), dtype=np.int64)
    return p, {float(g): focal_value(probs, labels, LossSpec(LossKind.FOCAL, float(g))) for g in gammas}


def plot_focal_curves(gammas, path) -> Path:
    p, curves = focal_curves(gammas)
    fig, ax = plt.subplots(figsize=(6, 4))
    for g, values in curves.items():
        line, = ax.plot(p, values, label=f"γ = {g:g}")
        line.set_gid(f"curve-gamma-{g:g}")
    ax.set_xlabel("probability of ground truth class")
    ax.set_ylabel("loss")
    ax.set_ylim(0, 5)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def plot_histogram(hist: Histogram, path, title: str = "") -> Path:
    """Stacked bars per partition plus the two reference markers.

    Each bar carries an SVG id ``bar:<partition>:<bin>:<count>`` so totals can
    be checked against the CSV without parsing geometry.
    """
    edges = hist.edges
    width = edges[1:] - edges[:-1]
    fig, ax = plt.subplots(figsize=(6, 4))
    bottom = np.zeros(len(width))
    for part, counts in hist.counts.items():
        bars = ax.bar(edges[:-1], counts, width=width, bottom=bottom, align="edge",
                      color=PARTITION_COLORS.get(part, None), label=part, edgecolor="none")
        for i, bar in enumerate(bars):
            bar.set_gid(f"bar:{part}:{i}:{int(counts[i])}")
        bottom = bottom + counts
    for name, value in hist.markers.items():
        line = ax.axvline(value, color=MARKER_COLORS.get(name, "k"), linestyle="--", linewidth=1,
                          label=f"{name} ({value:.3g})")
        line.set_gid(f"marker:{name}")
    ax.set_xlabel(hist.quantity)
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def svg_bar_total(path) -> int:
    import re

    text = Path(path).read_text(encoding="utf-8")
    return sum(int(m) for m in re.findall(r'id="bar:[^:"]+:\d+:(\d+)"', text))
