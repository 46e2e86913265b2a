"""Bar charts of per-method means with 95% intervals, rendered with matplotlib."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_summary(summary: Sequence[dict], path, reference: Optional[float] = None,
                 title: str = "", ylabel: str = "return") -> Path:
    """One bar per (method, env) group with its CI; ``reference`` draws the worst-case band.

    SVG output carries no timestamp and uses fixed glyph ids, so identical
    inputs give identical bytes.
    """
    rows = [r for r in summary if r["mean"] is not None]
    labels = [r["method"] if r["env"] == "all" else f"{r['method']}\n{r['env']}" for r in rows]
    means = [r["mean"] for r in rows]
    errs = [r["ci"] or 0.0 for r in rows]
    plt.rcParams["svg.hashsalt"] = "semdro"
    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(rows) + 1.5), 3.5))
    ax.bar(range(len(rows)), means, yerr=errs, capsize=3, color="0.6", edgecolor="0.2")
    if reference is not None:
        ax.axhline(reference, color="tab:red", lw=1.2, ls="--", label="worst-case reference")
        ax.axhspan(reference - 0.01 * abs(reference), reference + 0.01 * abs(reference),
                   color="tab:red", alpha=0.15)
        ax.legend(loc="best", fontsize=8)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format=path.suffix.lstrip(".") or "svg", metadata={"Date": None})
    plt.close(fig)
    return path
