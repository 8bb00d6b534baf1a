"""Report files for the evaluation harness.

A report path gets two artifacts: the delimited table itself (CSV) and
a rendered PNG figure alongside it (same stem), so harness runs drop
something both grep-able and glanceable.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_BAR_COLORS = {"blocked": "#2a7f62", "escaped": "#e0a426", "executed": "#c03028"}
_DPI = 150


def _figure_path(report_path: str | Path) -> Path:
    return Path(report_path).with_suffix(".png")


def write_attack_report(report, path: str | Path) -> Path:
    """CSV of per-category tallies plus a grouped bar chart."""
    rows = report.rows()
    path = Path(path)
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(
            handle, fieldnames=["category", "attempts", "blocked", "escaped", "executed"]
        )
        writer.writeheader()
        writer.writerows(rows)

    categories = [row["category"] for row in rows]
    x = range(len(categories))
    width = 0.27
    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    for offset, kind in ((-width, "blocked"), (0, "escaped"), (width, "executed")):
        ax.bar(
            [i + offset for i in x],
            [row[kind] for row in rows],
            width=width,
            label=kind,
            color=_BAR_COLORS[kind],
        )
    ax.set_xticks(list(x))
    ax.set_xticklabels([c.replace("_", "\n") for c in categories], fontsize=8)
    ax.set_ylabel("patterns")
    ax.set_title("Injection battery outcomes by category")
    ax.legend()
    fig.tight_layout()
    figure_path = _figure_path(path)
    fig.savefig(figure_path, dpi=_DPI)
    plt.close(fig)
    return figure_path


def write_mutation_report(report, path: str | Path) -> Path:
    """CSV of per-kind detection counts plus a bar chart."""
    path = Path(path)
    rows = [
        {"kind": kind, "trials": trials, "detected": detected,
         "rate": detected / trials if trials else 1.0}
        for kind, (detected, trials) in sorted(report.by_kind.items())
    ]
    rows.append({
        "kind": "total", "trials": report.trials, "detected": report.detected,
        "rate": report.detection_rate,
    })
    with path.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=["kind", "trials", "detected", "rate"])
        writer.writeheader()
        writer.writerows(rows)

    kinds = [row["kind"] for row in rows[:-1]]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.bar(kinds, [row["trials"] for row in rows[:-1]], color="#c8d6d2", label="trials")
    ax.bar(kinds, [row["detected"] for row in rows[:-1]], color="#2a7f62", label="detected")
    ax.set_ylabel("count")
    ax.set_title(
        f"Mutation detection: {report.detected}/{report.trials} "
        f"({report.detection_rate:.1%})"
    )
    ax.tick_params(axis="x", labelsize=8)
    ax.legend()
    fig.tight_layout()
    figure_path = _figure_path(path)
    fig.savefig(figure_path, dpi=_DPI)
    plt.close(fig)
    return figure_path
