"""Optional figures rendered from a runs CSV.

Plotting is strictly derivative: every figure is computed from the rows
already written to runs.csv, never from live run objects, so a plot can
always be regenerated later from the archived CSV alone.  Matplotlib is
imported lazily inside the render call, keeping the rest of the package
import-light for headless use.
"""

from __future__ import annotations

import csv
import statistics
from pathlib import Path
from typing import Optional, Union

__all__ = ["render_plots"]

_BAR_SERIES = (
    ("detection_rate", "detection rate"),
    ("fp_rate", "false-positive rate"),
    ("fn_rate", "false-negative rate"),
)


def _read_rows(runs_csv: Path) -> list[dict[str, str]]:
    with open(runs_csv, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def _group_label(row: dict[str, str]) -> str:
    value = row.get("value", "")
    return value if value else "run"


def _grouped(rows: list[dict[str, str]]) -> list[tuple[str, list[dict[str, str]]]]:
    groups: dict[str, list[dict[str, str]]] = {}
    order: list[str] = []
    for row in rows:
        label = _group_label(row)
        if label not in groups:
            groups[label] = []
            order.append(label)
        groups[label].append(row)
    try:
        order.sort(key=float)
    except ValueError:
        pass  # non-numeric labels keep file order
    return [(label, groups[label]) for label in order]


def _column_mean(rows: list[dict[str, str]], column: str) -> Optional[float]:
    values = [float(r[column]) for r in rows if r.get(column, "") != ""]
    return statistics.fmean(values) if values else None


def render_plots(
    runs_csv: Union[str, Path], out_dir: Union[str, Path]
) -> list[Path]:
    """Render summary figures from a runs CSV; returns the files written."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    source = Path(runs_csv)
    rows = _read_rows(source)
    if not rows:
        return []
    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    groups = _grouped(rows)
    labels = [label for label, _ in groups]
    axis_name = next((r["axis"] for r in rows if r.get("axis")), "scenario")
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(max(6.0, 1.5 * len(labels)), 4.0))
    width = 0.8 / len(_BAR_SERIES)
    for index, (column, legend) in enumerate(_BAR_SERIES):
        means = [_column_mean(cell_rows, column) for _, cell_rows in groups]
        offsets = [i + (index - 1) * width for i in range(len(labels))]
        ax.bar(
            offsets,
            [0.0 if m is None else m for m in means],
            width=width,
            label=legend,
        )
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_xlabel(axis_name)
    ax.set_ylabel("rate")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Detection effectiveness")
    ax.legend()
    fig.tight_layout()
    detection_png = target / "detection_effectiveness.png"
    fig.savefig(detection_png, dpi=120)
    plt.close(fig)
    written.append(detection_png)

    overhead = [
        _column_mean(cell_rows, "energy_overhead_pct") for _, cell_rows in groups
    ]
    if any(value is not None for value in overhead):
        fig, ax = plt.subplots(figsize=(max(6.0, 1.5 * len(labels)), 4.0))
        ax.bar(
            range(len(labels)),
            [0.0 if value is None else value for value in overhead],
            color="tab:orange",
        )
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels)
        ax.set_xlabel(axis_name)
        ax.set_ylabel("energy overhead (%)")
        ax.set_title("Security energy overhead (secured vs. unsecured twins)")
        ax.axhline(0.0, color="black", linewidth=0.8)
        fig.tight_layout()
        overhead_png = target / "energy_overhead.png"
        fig.savefig(overhead_png, dpi=120)
        plt.close(fig)
        written.append(overhead_png)

    return written
