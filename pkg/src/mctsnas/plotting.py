"""Static SVG figures for bench reports.

Figures are drawn on bare ``Figure`` objects (no pyplot state) and saved
with a fixed hash salt, text kept as text and no date stamp, so the same
report always produces the same bytes.
"""

from __future__ import annotations

import matplotlib
from matplotlib.figure import Figure

SVG_RC = {"svg.hashsalt": "mctsnas", "svg.fonttype": "none", "font.family": "DejaVu Sans"}


def save_svg(fig: Figure, path):
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


def progression_svg(report, path):
    """Mean best-so-far accuracy against the number of unique samples."""
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot()
    for s in report.summaries.values():
        if s.curve:
            ax.plot(range(1, len(s.curve) + 1), s.curve, label=s.algorithm, linewidth=1.2)
    ax.set_xscale("log")
    ax.set_xlabel("unique samples")
    ax.set_ylabel("best accuracy so far (mean over trials)")
    ax.legend(loc="lower right", frameon=False)
    fig.tight_layout()
    save_svg(fig, path)


def boxplot_svg(report, path):
    """Distribution of samples needed to reach the target, per algorithm."""
    fig = Figure(figsize=(6.0, 4.0))
    ax = fig.add_subplot()
    names = list(report.summaries)
    data = [report.summaries[n].samples or [float("nan")] for n in names]
    ax.boxplot(data)
    ax.set_xticks(range(1, len(names) + 1))
    ax.set_xticklabels([f"{n}\n{report.summaries[n].reached}/{report.summaries[n].trials}" for n in names])
    ax.set_ylabel("samples to target")
    fig.tight_layout()
    save_svg(fig, path)
