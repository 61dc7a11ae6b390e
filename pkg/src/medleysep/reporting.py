"""Human-readable result tables and matplotlib figures for the report
path of the CLI."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

TABLE_COLUMNS = ("category", "n_segments", "sdr_i_mean", "sdr_i_median",
                 "si_sdr_i_mean", "si_sdr_i_median")


def write_summary_table(summary: dict, path) -> None:
    """Category x metric table as tab-delimited text."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t")
        writer.writerow(TABLE_COLUMNS)
        rows = dict(summary.get("by_category", {}))
        rows["overall"] = summary["overall"]
        for cat, agg in rows.items():
            writer.writerow([cat] + [
                agg[c] if isinstance(agg[c], int) else
                (f"{agg[c]:.2f}" if agg[c] is not None else "")
                for c in TABLE_COLUMNS[1:]
            ])


def format_summary(summary: dict) -> str:
    lines = [f"segments: {summary['n_segments']} (skipped {summary['n_skipped']})"]
    for cat, agg in summary.get("by_category", {}).items():
        lines.append(
            f"  {cat:<14} n={agg['n_segments']:<4} "
            f"SDRi mean {agg['sdr_i_mean']:.2f} / median {agg['sdr_i_median']:.2f}  "
            f"SI-SDRi mean {agg['si_sdr_i_mean']:.2f} / median {agg['si_sdr_i_median']:.2f}"
        )
    return "\n".join(lines)


def render_figures(records, summary: dict, out_dir) -> list:
    """Render category-mean bars and a per-source SI-SDRi histogram.
    Returns the written figure paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    by_cat = summary.get("by_category", {})
    if by_cat:
        cats = sorted(by_cat)
        sdr = [by_cat[c]["sdr_i_mean"] for c in cats]
        sisdr = [by_cat[c]["si_sdr_i_mean"] for c in cats]
        fig, ax = plt.subplots(figsize=(6, 4))
        x = range(len(cats))
        ax.bar([i - 0.2 for i in x], sdr, width=0.4, label="SDRi")
        ax.bar([i + 0.2 for i in x], sisdr, width=0.4, label="SI-SDRi")
        ax.set_xticks(list(x))
        ax.set_xticklabels(cats, rotation=15)
        ax.set_ylabel("mean improvement [dB]")
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, "category_means.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    values = [v for r in records for v in r.si_sdr_i]
    if values:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(values, bins=40)
        ax.set_xlabel("per-source SI-SDRi [dB]")
        ax.set_ylabel("count")
        fig.tight_layout()
        path = os.path.join(out_dir, "si_sdri_histogram.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)
    return paths
