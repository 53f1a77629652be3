"""Figure rendering for run reports.

Every report path that writes delimited output (loss logs, PCV CSV,
ablation table, deformation history) also renders a matplotlib figure
next to it. Headless backend; files only.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def loss_curve_figure(history, out_path, title="training loss"):
    """Per-term loss curves over steps. `history` is a list of dicts."""
    if not history:
        return None
    terms = [k for k in history[0] if k != "step"]
    fig, ax = plt.subplots(figsize=(7, 4))
    steps = range(len(history))
    for term in terms:
        ax.plot(steps, [h.get(term, float("nan")) for h in history], label=term, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return Path(out_path)


def loss_curves_from_jsonl(jsonl_path, out_path):
    history = []
    with open(jsonl_path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("kind") == "step":
                history.append(rec["terms"])
    return loss_curve_figure(history, out_path)


def pcv_figure(curves: dict, out_path, units="mm-equivalent"):
    """Percentage-of-correct-vertices over distance, one line per label."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, curve in curves.items():
        xs = [t for t, _ in curve]
        ys = [f for _, f in curve]
        ax.plot(xs, ys, marker="o", ms=2.5, lw=1.2, label=label)
    ax.set_xlabel(f"threshold ({units})")
    ax.set_ylabel("fraction of correct vertices")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return Path(out_path)


def ablation_figure(rows, out_path):
    """Grouped bars of aligned / non-aligned vertex error per ablation row."""
    fig, ax = plt.subplots(figsize=(8, 4))
    labels = [f"{r['id']}: {r['graformers']}x {r['graph_input']}+F{r['feature_width']}"
              for r in rows]
    xs = range(len(rows))
    width = 0.38
    ax.bar([x - width / 2 for x in xs],
           [r.get("vertex_err_aligned", float("nan")) for r in rows],
           width, label="aligned")
    ax.bar([x + width / 2 for x in xs],
           [r.get("vertex_err", float("nan")) for r in rows],
           width, label="non-aligned")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("held-out vertex error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return Path(out_path)


def deform_history_figure(history, out_path):
    fig, ax = plt.subplots(figsize=(7, 4))
    for term in ("total", "chamfer", "edge", "normal", "laplacian"):
        ax.plot([h["iter"] for h in history], [h[term] for h in history],
                label=term, lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss term")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return Path(out_path)
