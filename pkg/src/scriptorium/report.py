"""Round-by-round comparison tables (CSV and aligned text) across runs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from scriptorium.errors import ValidationError
from scriptorium.loop import load_config, load_states
from scriptorium.metrics import MetricsReport, format_percent

METRIC_COLUMNS = ("map50", "map5095", "precision", "recall", "f1")
_HEADINGS = {
    "map50": "mAP@50",
    "map5095": "mAP@50:95",
    "precision": "P",
    "recall": "R",
    "f1": "F1",
}
_STRATEGY_LABELS = {"uncertainty": "AL", "sequential": "SL"}


@dataclass
class RunSeries:
    label: str
    images: list[int]
    metrics: list[MetricsReport]


def load_run_series(run_dir: str | Path) -> RunSeries:
    cfg = load_config(run_dir)
    states = load_states(run_dir)
    if not states:
        raise ValidationError(f"{run_dir}: no completed rounds")
    return RunSeries(
        label=_STRATEGY_LABELS[cfg.strategy],
        images=[len(s.labeled_ids) for s in states],
        metrics=[s.metrics for s in states],
    )


def _unique_labels(series: list[RunSeries]) -> list[str]:
    labels = []
    for s in series:
        label = s.label
        n = 2
        while label in labels:
            label = f"{s.label}{n}"
            n += 1
        labels.append(label)
    return labels


def _best_labels(series: list[RunSeries], labels: list[str], r: int, metric: str) -> set[str]:
    """Labels sharing the round's best value for a metric; NaN never wins."""
    values = [getattr(s.metrics[r], metric) for s in series]
    finite = [v for v in values if not math.isnan(v)]
    if not finite:
        return set()
    best = max(finite)
    return {lab for lab, v in zip(labels, values) if not math.isnan(v) and v == best}


def render_report(series: list[RunSeries]) -> tuple[str, str]:
    """Returns (csv_text, aligned_text); best-of-round is marked per metric.

    In the text table the winning cells carry a ``*``; the CSV carries
    ``best_<metric>`` columns naming the winning run(s) instead, so the
    numeric cells stay machine-readable. Marking needs two or more runs.
    """
    if not series:
        raise ValidationError("no runs to report")
    rounds = len(series[0].metrics)
    for s in series[1:]:
        if len(s.metrics) != rounds:
            raise ValidationError(
                f"mismatched round counts: {rounds} vs {len(s.metrics)} ({s.label})"
            )
        if s.images != series[0].images:
            raise ValidationError("runs have different labeled-set schedules")
    labels = _unique_labels(series)
    compare = len(series) > 1

    header = ["round", "images"]
    for label in labels:
        header += [f"{label}_{m}" for m in METRIC_COLUMNS]
    if compare:
        header += [f"best_{m}" for m in METRIC_COLUMNS]

    csv_lines = [",".join(header)]
    for r in range(rounds):
        row = [str(r), str(series[0].images[r])]
        for s in series:
            row += [format_percent(getattr(s.metrics[r], m)) for m in METRIC_COLUMNS]
        if compare:
            row += [
                "+".join(sorted(_best_labels(series, labels, r, m)))
                for m in METRIC_COLUMNS
            ]
        csv_lines.append(",".join(row))
    csv_text = "\n".join(csv_lines) + "\n"

    text_header = ["Round", "#Images"]
    for label in labels:
        text_header += [f"{_HEADINGS[m]} ({label})" for m in METRIC_COLUMNS]
    rows = [text_header]
    for r in range(rounds):
        row = [str(r), str(series[0].images[r])]
        for s, label in zip(series, labels):
            for m in METRIC_COLUMNS:
                cell = format_percent(getattr(s.metrics[r], m))
                if compare and label in _best_labels(series, labels, r, m):
                    cell += "*"
                row.append(cell)
        rows.append(row)
    widths = [max(len(row[c]) for row in rows) for c in range(len(text_header))]
    aligned = "\n".join(
        "  ".join(cell.rjust(widths[c]) for c, cell in enumerate(row)) for row in rows
    )
    return csv_text, aligned + "\n"


def render_run_dirs(run_dirs: list[str | Path]) -> tuple[str, str]:
    return render_report([load_run_series(d) for d in run_dirs])
