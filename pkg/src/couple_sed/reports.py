"""Experiment report output: CSV rows, JSON summary, rendered figures.

Scores are written as EB-F1 percentages. Every report CSV gets a
matplotlib bar figure (medians plus per-seed dots) rendered next to it.
"""

import csv
import json

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


class VariantResult:
    """Scores of one experiment variant across seeds (EB-F1 percent)."""

    def __init__(self, variant, scores):
        self.variant = variant
        self.scores = dict(scores)  # seed -> percent

    @property
    def median(self):
        return float(np.median(list(self.scores.values())))


class AblationReport:
    """Rows of (variant, per-seed EB-F1, median) plus context footers."""

    def __init__(self, rows, footer=()):
        self.rows = list(rows)
        self.footer = list(footer)

    def median(self, variant):
        for row in self.rows:
            if row.variant == variant:
                return row.median
        raise KeyError(f"no variant {variant!r} in report")

    def medians(self):
        return {row.variant: row.median for row in self.rows}


REPORT_COLUMNS = ("variant", "seed", "eb_f1", "median")


def write_report_csv(path, report):
    """Fixed-order CSV: variant, seed, eb_f1, median (one row per seed)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows:
            for seed in sorted(row.scores):
                writer.writerow([row.variant, seed,
                                 f"{row.scores[seed]:.2f}", f"{row.median:.2f}"])
        for line in report.footer:
            f.write(f"# {line}\n")


def write_summary_json(path, mode, config_hash, report, extra=None):
    payload = {"mode": mode, "config_hash": config_hash,
               "medians": {row.variant: round(row.median, 2) for row in report.rows}}
    if extra:
        payload.update(extra)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def render_report_figure(path, report, title=""):
    """Bar chart of per-variant medians with per-seed scatter dots."""
    fig, ax = plt.subplots(figsize=(1.6 + 1.2 * len(report.rows), 3.6))
    names = [row.variant for row in report.rows]
    medians = [row.median for row in report.rows]
    x = np.arange(len(names))
    ax.bar(x, medians, width=0.6, color="#4878a8", zorder=2)
    for i, row in enumerate(report.rows):
        vals = list(row.scores.values())
        ax.plot(np.full(len(vals), i), vals, "o", color="#303030",
                markersize=3.5, zorder=3)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("EB-F1 (%)")
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(axis="y", alpha=0.3, zorder=0)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_history_figure(path, history):
    """Loss components and validation EB-F1 across epochs."""
    epochs = [rec.epoch for rec in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.5, 3.4))
    for name in ("j1_real", "j1_pseudo", "j2_strong", "j2_weak", "total"):
        ax1.plot(epochs, [getattr(rec.loss, name) for rec in history], label=name)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=7)
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [100.0 * rec.val_eb_f1 for rec in history], color="#4878a8")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation EB-F1 (%)")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
