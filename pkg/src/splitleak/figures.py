"""Render sweep results to figure files next to the CSV output.

Plots are post-processing of the long-form sweep CSV: the CSV stays the
reproducibility contract, the figure is a convenience rendering of it.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SOURCE_STYLE = {
    "gradients": dict(color="tab:red", marker="o"),
    "smashed": dict(color="tab:blue", marker="s"),
}


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return [row for row in csv.DictReader(f)]


def render_sweep_figure(csv_path, out_path, title: str | None = None) -> None:
    """One accuracy-vs-axis panel: solid attack accuracy per source, dashed model accuracy."""
    rows = [r for r in read_sweep_csv(csv_path) if not r.get("error")]
    if not rows:
        raise ValueError(f"{csv_path}: no successful sweep rows to plot")
    axis = rows[0]["axis"]
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for source in ("gradients", "smashed"):
        series = [(float(r["value"]), float(r["attack_accuracy"]))
                  for r in rows if r["source"] == source and r["attack_accuracy"] != ""]
        if not series:
            continue
        series.sort()
        xs, ys = zip(*series)
        ax.plot(xs, ys, label=f"attack ({source})", **_SOURCE_STYLE[source])
    model = sorted({(float(r["value"]), float(r["model_test_accuracy"]))
                    for r in rows if r["model_test_accuracy"] != ""})
    if model:
        xs, ys = zip(*model)
        ax.plot(xs, ys, "k--", marker=".", label="model accuracy")
    ax.set_xlabel(axis)
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
