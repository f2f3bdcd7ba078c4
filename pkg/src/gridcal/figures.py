"""Figure rendering for the report paths.

Every CLI report that emits delimited data can also render the matching
matplotlib figure next to it: metric-versus-sensor-count curves from a
sweep, and the stacked raw/corrected/context-agnostic traces from a
mapping dump.  Rendering always goes to files (Agg backend); nothing
here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_metric_figure", "render_mapping_traces", "render_score_trace"]

_VARIANT_STYLE = {
    "naive": dict(color="tab:gray", marker="s"),
    "ip": dict(color="tab:orange", marker="^"),
    "iplc": dict(color="tab:blue", marker="o"),
}

_METRIC_LABEL = {"auc": "AUC", "f_measure": "F-measure (top-k)"}


def render_metric_figure(results, metric: str, out_path) -> Path:
    """One curve per variant: metric against sensor count, median over
    seeds with the individual runs as faint points."""
    series: dict[str, dict[int, list[float]]] = {}
    for res in results:
        if res is None:
            continue
        series.setdefault(res.variant.value, {}).setdefault(res.sensor_count, []).append(
            getattr(res, metric)
        )
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for variant, by_count in series.items():
        counts = sorted(by_count)
        medians = [float(np.median(by_count[c])) for c in counts]
        style = _VARIANT_STYLE.get(variant, {})
        ax.plot(counts, medians, label=variant, markersize=5, linewidth=1.4, **style)
        for count in counts:
            ax.plot(
                [count] * len(by_count[count]),
                by_count[count],
                linestyle="none",
                marker=".",
                alpha=0.35,
                color=style.get("color"),
            )
    ax.set_xlabel("number of sensors")
    ax.set_ylabel(_METRIC_LABEL.get(metric, metric))
    ax.set_ylim(-0.02, 1.05)
    ax.grid(alpha=0.3)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    out = Path(out_path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def render_mapping_traces(rows, branch_id: int, out_path, truth_ticks=(), shift_ticks=()) -> Path:
    """Three stacked panels for one branch: raw flow, injection-
    corrected flow, context-agnostic flow (MW over ticks)."""
    ticks = [r["tick"] for r in rows]
    panels = [
        ("raw_mw", "raw"),
        ("corrected_mw", "injection-corrected"),
        ("agnostic_mw", "context-agnostic"),
    ]
    fig, axes = plt.subplots(3, 1, figsize=(6.4, 5.6), sharex=True)
    for ax, (key, label) in zip(axes, panels):
        values = [r[key] for r in rows]
        ax.plot(ticks, values, linewidth=0.9, color="tab:blue")
        ax.set_ylabel(label, fontsize=8)
        ax.grid(alpha=0.3)
        for t in truth_ticks:
            ax.axvline(t, color="tab:red", alpha=0.45, linewidth=0.8)
        for t in shift_ticks:
            ax.axvline(t, color="tab:green", alpha=0.45, linewidth=0.8, linestyle="--")
    axes[0].set_title(f"flow on branch {branch_id} (MW)", fontsize=9)
    axes[-1].set_xlabel("tick")
    fig.tight_layout()
    out = Path(out_path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def render_score_trace(verdicts, out_path, truth_ticks=(), threshold: float | None = None) -> Path:
    """Anomaly score per tick on a log scale, with truth markers."""
    ticks = [v.tick for v in verdicts]
    scores = [v.score if np.isfinite(v.score) else np.nan for v in verdicts]
    fig, ax = plt.subplots(figsize=(6.4, 2.8))
    ax.semilogy(ticks, np.maximum(scores, 1e-12), linewidth=0.9, color="tab:blue")
    for t in truth_ticks:
        ax.axvline(t, color="tab:red", alpha=0.4, linewidth=0.8)
    if threshold is not None:
        ax.axhline(threshold, color="black", linewidth=0.8, linestyle=":")
    ax.set_xlabel("tick")
    ax.set_ylabel("anomaly score")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    out = Path(out_path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
