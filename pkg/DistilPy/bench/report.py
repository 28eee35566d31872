"""
Contains
========

* ReportFormat
* summary_frame
* emit_report

Renders a ResultTable as files named after the table hash:

    table-<hash>.csv            one line per row, reloadable
    table-<hash>-summary.csv    ACC/ASR in percent and BS per value, plus an Average row
    table-<hash>.jsonl          header line plus one JSON object per row
    table-<hash>.png            grouped bars (categorical axes) or ACC/ASR lines (numeric axes)
    table-<hash>-plot.json      what the figure contains
"""
from __future__ import annotations

import json
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from DistilPy.base import ValidationError, logger  # noqa: E402
from DistilPy.config import constants  # noqa: E402
from DistilPy.core.types import NamedEnum  # noqa: E402
from DistilPy.bench.sweep import SweepAxis  # noqa: E402

METRIC_NAMES = ("ACC", "ASR", "BS")


class ReportFormat(NamedEnum):
    CSV = "CSV"
    JSONL = "JSONL"
    PLOTS = "PLOTS"


def _label(value):
    return value if isinstance(value, str) else json.dumps(value)


def summary_frame(table):
    """
    Per value ACC and ASR in percent and BS, rounded for display, with a
    final ``Average`` row over the completed rows.
    """
    decimals = constants.REPORT_DECIMALS
    completed = [row for row in table.rows if row.completed]
    frame = pd.DataFrame(
        [[100.0 * row.metrics.acc, 100.0 * row.metrics.asr, row.metrics.bs]
         for row in completed],
        index=[_label(row.value) for row in completed], columns=list(METRIC_NAMES))
    if len(frame):
        frame.loc["Average"] = frame.mean(axis=0)
    frame.index.name = table.axis
    return frame.round(decimals)


def _plot_grouped_bars(table, completed, path):
    groups = [_label(row.value) for row in completed]
    values = np.array([[row.metrics.acc, row.metrics.asr, row.metrics.bs] for row in completed])
    positions = np.arange(len(groups))
    width = 0.8 / len(METRIC_NAMES)

    fig, ax = plt.subplots(1, 1, figsize=(max(6, 1.5 * len(groups)), 4))
    bars = 0
    for index, metric in enumerate(METRIC_NAMES):
        drawn = ax.bar(positions + (index - 1) * width, values[:, index], width, label=metric,
                       edgecolor="black")
        bars += len(drawn.patches)
    ax.set_xticks(positions)
    ax.set_xticklabels(groups)
    ax.set_xlabel(table.axis)
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return {"kind": "grouped_bar", "groups": groups, "series": list(METRIC_NAMES), "bars": bars}


def _plot_lines(table, completed, path):
    xs = [row.value for row in completed]
    if table.axis == SweepAxis.DATA_RATIO.value:
        xs = [100.0 * x for x in xs]
    series = {"ACC": [100.0 * row.metrics.acc for row in completed],
              "ASR": [100.0 * row.metrics.asr for row in completed]}

    fig, ax = plt.subplots(1, 1, figsize=(6, 4))
    lines = 0
    for name, ys in series.items():
        lines += len(ax.plot(xs, ys, marker="o", label=name))
    ax.set_xlabel(table.axis)
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return {"kind": "line", "x": xs, "series": list(series), "lines": lines,
            "points": len(xs)}


def emit_report(table, formats, out_dir):
    """
    Writes ``table`` in each of ``formats`` (CSV, JSONL, PLOTS) under
    ``out_dir`` and returns the list of written paths.

    USAGE
    =====

    >>> emit_report(table, {"CSV", "PLOTS"}, "reports")
    ['reports/table-3f2a9c0d1e4b5a67.csv', 'reports/table-3f2a9c0d1e4b5a67-summary.csv', ...]
    """
    formats = {ReportFormat.parse(item, "formats") for item in formats or ()}
    if not formats:
        raise ValidationError("formats", "at least one of CSV, JSONL, PLOTS is required")
    if len(table) == 0:
        raise ValidationError("table", "cannot report an empty table")

    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, "table-%s" % table.hash)
    written = []

    if ReportFormat.CSV in formats:
        written.append(table.write_csv(stem + ".csv"))
        summary_frame(table).to_csv(stem + "-summary.csv",
                                    float_format="%%.%df" % constants.REPORT_DECIMALS)
        written.append(stem + "-summary.csv")

    if ReportFormat.JSONL in formats:
        written.append(table.write_jsonl(stem + ".jsonl"))

    if ReportFormat.PLOTS in formats:
        completed = [row for row in table.rows if row.completed]
        if not completed:
            logger.warning("No completed row in table %s, skipping plots", table.hash)
        else:
            if SweepAxis.parse(table.axis, "axis").numeric:
                metadata = _plot_lines(table, completed, stem + ".png")
            else:
                metadata = _plot_grouped_bars(table, completed, stem + ".png")
            metadata.update(axis=table.axis, table=table.hash)
            with open(stem + "-plot.json", "w") as handle:
                json.dump(metadata, handle, indent=2)
            written.extend([stem + ".png", stem + "-plot.json"])

    logger.info("Report for table %s: %s", table.hash, ", ".join(written))
    return written
