"""Figure rendering for experiment reports.

Two PNGs land next to the delimited output: the relative-MSE comparison
and a chain-diagnostics panel. Rendering is headless (Agg) so runs work
over SSH and in CI.
"""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_figures"]


def _grouped_bars(ax, functionals, methods, values, title, log_scale):
    n_groups = len(functionals)
    n_methods = len(methods)
    width = 0.8 / n_methods
    x = np.arange(n_groups)
    for j, label in enumerate(methods):
        heights = [values[(name, label)] for name in functionals]
        plotted = [h if h and not math.isnan(h) else 0.0 for h in heights]
        ax.bar(x + (j - (n_methods - 1) / 2) * width, plotted, width, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels(functionals, rotation=20, ha="right")
    ax.set_title(title)
    if log_scale:
        ax.set_yscale("log")
    ax.legend(fontsize="small")
    ax.grid(True, axis="y", alpha=0.3)


def render_figures(bundle: dict, output_dir: str) -> dict:
    """Write relative_mse.png and diagnostics.png from a result bundle."""
    os.makedirs(output_dir, exist_ok=True)
    functionals = bundle["functionals"]
    methods = bundle["methods"]
    cells = {(row["functional"], row["method"]): row for row in bundle["mse_rows"]}

    rel_path = os.path.join(output_dir, "relative_mse.png")
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(functionals), 4.2))
    rel = {key: row["relative_mse"] for key, row in cells.items()}
    positive = [v for v in rel.values() if v and not math.isnan(v)]
    _grouped_bars(
        ax,
        functionals,
        methods,
        rel,
        f"MSE relative to {bundle['reference']}",
        log_scale=bool(positive) and min(positive) < 0.02,
    )
    fig.tight_layout()
    fig.savefig(rel_path, dpi=120)
    plt.close(fig)

    diag_path = os.path.join(output_dir, "diagnostics.png")
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(3.0 + 1.6 * len(functionals), 4.0))
    iacts = {key: row["mean_iact"] for key, row in cells.items()}
    _grouped_bars(ax1, functionals, methods, iacts, "mean IACT", log_scale=False)
    acc = [
        float(np.nanmean([cells[(name, label)]["acceptance"] for name in functionals]))
        for label in methods
    ]
    ax2.bar(np.arange(len(methods)), acc, 0.6, color="tab:gray")
    ax2.set_xticks(np.arange(len(methods)))
    ax2.set_xticklabels(methods, rotation=20, ha="right")
    ax2.set_ylim(0.0, 1.05)
    ax2.set_title("move fraction")
    ax2.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(diag_path, dpi=120)
    plt.close(fig)
    return {"relative_mse": rel_path, "diagnostics": diag_path}
