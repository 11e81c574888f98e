"""Scatter figures for grid results.

Two trade-off views per run: individual-fairness violation against
group-fairness violation, and normalized utility against group-fairness
violation.  Marker area grows with phi so constraint strength is readable
off the plot; one panel per gamma value.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

_COLORS = {
    "main": "tab:blue",
    "unconstrained": "tab:red",
    "greedy": "tab:green",
    "bvn-if": "tab:orange",
    "bvn-gf-if": "tab:purple",
}


def _load_rows(csv_path):
    with open(csv_path, newline="") as fh:
        return [row for row in csv.DictReader(fh) if row["status"] == "ok"]


def _scatter(rows, y_field, y_label, path):
    gammas = sorted({float(r["gamma"]) for r in rows})
    fig, axes = plt.subplots(
        1, max(len(gammas), 1), figsize=(4.2 * max(len(gammas), 1), 3.6),
        squeeze=False, sharey=True,
    )
    for ax, gamma in zip(axes[0], gammas):
        sub = [r for r in rows if float(r["gamma"]) == gamma]
        for alg in sorted({r["algorithm"] for r in sub}):
            pts = [r for r in sub if r["algorithm"] == alg]
            ax.scatter(
                [float(r["g_violation"]) for r in pts],
                [float(r[y_field]) for r in pts],
                s=[40 + 60 * float(r["phi"]) for r in pts],
                alpha=0.7,
                color=_COLORS.get(alg, "gray"),
                label=alg,
            )
        ax.set_title(f"gamma = {gamma:g}")
        ax.set_xlabel("group-fairness violation")
        ax.grid(True, alpha=0.3)
    axes[0][0].set_ylabel(y_label)
    handles, labels = axes[0][0].get_legend_handles_labels()
    if handles:
        fig.legend(handles, labels, loc="upper center", ncol=len(labels),
                   bbox_to_anchor=(0.5, 1.12))
    fig.tight_layout()
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def plot_tradeoffs(csv_path, out_dir) -> list[Path]:
    """Render both scatter figures next to the results CSV."""
    rows = _load_rows(csv_path)
    out = Path(out_dir)
    fairness = out / "fairness_scatter.svg"
    utility = out / "utility_scatter.svg"
    _scatter(rows, "i_violation", "individual-fairness violation", fairness)
    _scatter(rows, "utility_norm", "normalized utility", utility)
    return [fairness, utility]
