"""Report figures and episode replay strips, rendered to PNG files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .formats import LABEL_PALETTE
from .metrics import BenchmarkReport
from .sim import direction_vector


def report_figures(report: BenchmarkReport, out_base) -> list[Path]:
    """Render metric curves and action-rate bars next to the delimited output."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    paths = []

    categories = sorted({r.category for r in report.rows})
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    for metric, axis, label in (
        ("miou", axes[0], "mIoU"),
        ("mape", axes[1], "MAPE"),
        ("dh95", axes[2], "dH95 [px]"),
    ):
        for cat in categories:
            rows = sorted((r for r in report.rows if r.category == cat), key=lambda r: r.timestep)
            axis.plot(
                [r.timestep for r in rows],
                [getattr(r, metric) for r in rows],
                marker="o",
                label=cat,
            )
        axis.set_xlabel("interaction step")
        axis.set_ylabel(label)
        axis.grid(alpha=0.3)
    axes[0].set_ylim(0, 1.02)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    curve_path = out_base.parent / f"{out_base.name}_curves.png"
    fig.savefig(curve_path, dpi=120)
    plt.close(fig)
    paths.append(curve_path)

    fig, axis = plt.subplots(figsize=(1.6 + 1.4 * len(categories), 3.2))
    xs = np.arange(len(categories))
    eff = [next(r.effective_rate for r in report.rows if r.category == c) for c in categories]
    opt = [next(r.optimal_rate for r in report.rows if r.category == c) for c in categories]
    axis.bar(xs - 0.18, eff, width=0.36, label="effective")
    axis.bar(xs + 0.18, opt, width=0.36, label="optimal")
    axis.set_xticks(xs)
    axis.set_xticklabels(categories, fontsize=8)
    axis.set_ylim(0, 1.02)
    axis.set_ylabel("rate over all steps")
    axis.legend(fontsize=8)
    axis.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    bars_path = out_base.parent / f"{out_base.name}_actions.png"
    fig.savefig(bars_path, dpi=120)
    plt.close(fig)
    paths.append(bars_path)
    return paths


def _label_rgb(labels: np.ndarray) -> np.ndarray:
    palette = np.array(LABEL_PALETTE, dtype=float) / 255.0
    return palette[np.clip(labels, 0, len(LABEL_PALETTE) - 1)]


def replay_strip(record, out_path) -> Path:
    """Side-by-side strip: observation with the action, labels, and memory per step."""
    n_steps = len(record.steps)
    fig, axes = plt.subplots(3, n_steps, figsize=(1.9 * n_steps, 6.0), squeeze=False)
    for t, step_rec in enumerate(record.steps):
        obs_axis = axes[0][t]
        obs_axis.imshow(record.observations[t])
        push_r, push_c = step_rec.action.push
        u = direction_vector(step_rec.action.direction)
        obs_axis.annotate(
            "",
            xy=(push_c + 9 * u[0], push_r + 9 * u[1]),
            xytext=(push_c, push_r),
            arrowprops=dict(color="red", width=1.2, headwidth=5, headlength=5),
        )
        if step_rec.action.hold is not None:
            hold_r, hold_c = step_rec.action.hold
            obs_axis.plot([hold_c], [hold_r], marker="o", color="magenta", markersize=5)
        obs_axis.set_title(f"step {t + 1}: {step_rec.case.value}", fontsize=7)
        axes[1][t].imshow(_label_rgb(record.labels[t + 1]))
        axes[2][t].imshow(_label_rgb(step_rec.memory_labels))
        for row in range(3):
            axes[row][t].set_xticks([])
            axes[row][t].set_yticks([])
    axes[0][0].set_ylabel("observation", fontsize=8)
    axes[1][0].set_ylabel("ground truth", fontsize=8)
    axes[2][0].set_ylabel("part memory", fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
