"""Search diagnostics: rolling means, per-epsilon stats, histograms, Q summaries.

All outputs are plain rows ready for CSV export; plotting is out of scope.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .qlearning import QTable
from .space import Conv, Pool, Terminate, TerminationKind


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    epsilon: float
    accuracy: float
    cached: bool


def records_from_log(records: list[dict]) -> list[IterationRecord]:
    """Keep successfully evaluated iterations, in log order."""
    out = []
    for rec in records:
        if rec.get("status") == "ok" and rec.get("accuracy") is not None:
            out.append(IterationRecord(rec["iteration"], rec["epsilon"],
                                       rec["accuracy"], rec["cached"]))
    return out


# ---------------------------------------------------------------------------
# Accuracy series
# ---------------------------------------------------------------------------

def rolling_mean(log: list[IterationRecord], window: int) -> list[float]:
    """Trailing mean over up to ``window`` records, one value per record."""
    if window < 1:
        raise ValueError("window must be >= 1")
    values = np.array([rec.accuracy for rec in log], dtype=float)
    if values.size == 0:
        return []
    sums = np.cumsum(values)
    out = np.empty_like(values)
    out[:window] = sums[:window] / np.arange(1, min(window, values.size) + 1)
    if values.size > window:
        out[window:] = (sums[window:] - sums[:-window]) / window
    return out.tolist()


@dataclass(frozen=True)
class EpsilonStats:
    epsilon: float
    mean: float
    std: float
    count: int


def per_epsilon_stats(log: list[IterationRecord]) -> list[EpsilonStats]:
    """Mean/std/count of accuracy per epsilon, in descending epsilon order."""
    groups: dict[float, list[float]] = {}
    for rec in log:
        groups.setdefault(rec.epsilon, []).append(rec.accuracy)
    stats = []
    for eps in sorted(groups, reverse=True):
        values = np.array(groups[eps])
        stats.append(EpsilonStats(eps, float(values.mean()),
                                  float(values.std()), len(values)))
    return stats


@dataclass(frozen=True)
class HistogramBin:
    lo: float
    hi: float
    count: int


def accuracy_histogram(log: list[IterationRecord], epsilon: float,
                       bin_width: float) -> list[HistogramBin]:
    """Accuracy counts for one epsilon over half-open, lower-inclusive bins.

    Bins cover [0, 1]; an accuracy of exactly 1.0 lands in the final bin.
    """
    if not 0.0 < bin_width <= 1.0:
        raise ValueError("bin_width must be in (0, 1]")
    n_bins = int(math.floor(1.0 / bin_width + 1e-9)) + 1
    counts = [0] * n_bins
    for rec in log:
        if rec.epsilon == epsilon:
            idx = int(math.floor(rec.accuracy / bin_width + 1e-9))
            counts[min(idx, n_bins - 1)] += 1
    return [HistogramBin(round(i * bin_width, 12), round((i + 1) * bin_width, 12),
                         counts[i]) for i in range(n_bins)]


# ---------------------------------------------------------------------------
# Q-value summaries
# ---------------------------------------------------------------------------

TERMINATION_COMBINED = "terminate"

_TYPE_LABELS = {
    TerminationKind.SM: "terminate_sm",
    TerminationKind.GAP: "terminate_gap",
}


def _action_label(action) -> str:
    if isinstance(action, Terminate):
        return _TYPE_LABELS[action.kind]
    layer = action.layer
    if isinstance(layer, Conv):
        return "conv"
    if isinstance(layer, Pool):
        return "pool"
    return "fc"


@dataclass(frozen=True)
class QSummaryRow:
    depth: int
    group: str
    mean_q: float
    count: int


def q_summary(q: QTable) -> tuple[list[QSummaryRow], list[QSummaryRow]]:
    """Mean stored Q by (action layer type, state depth) and (conv field, depth).

    Only materialized entries are averaged; the sparse defaults stay out of
    the summary. Terminations appear per kind and under a combined row. The
    depth column is the depth of the state the action was taken from; the
    chosen layer itself sits at depth + 1.
    """
    by_type: dict[tuple[int, str], list[float]] = {}
    by_field: dict[tuple[int, str], list[float]] = {}
    for (state, action), value in q.values.items():
        label = _action_label(action)
        by_type.setdefault((state.depth, label), []).append(value)
        if isinstance(action, Terminate):
            by_type.setdefault((state.depth, TERMINATION_COMBINED), []).append(value)
        elif isinstance(action.layer, Conv):
            key = (state.depth, str(action.layer.field))
            by_field.setdefault(key, []).append(value)

    def rows(groups: dict[tuple[int, str], list[float]]) -> list[QSummaryRow]:
        return [QSummaryRow(depth, group, float(np.mean(vals)), len(vals))
                for (depth, group), vals in sorted(groups.items())]

    return rows(by_type), rows(by_field)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def write_rolling_csv(path: str | Path, log: list[IterationRecord],
                      window: int) -> None:
    series = rolling_mean(log, window)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iteration", "accuracy", "rolling_mean"])
        for rec, mean in zip(log, series):
            writer.writerow([rec.iteration, rec.accuracy, mean])


def write_per_epsilon_csv(path: str | Path, log: list[IterationRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epsilon", "mean", "std", "count"])
        for stat in per_epsilon_stats(log):
            writer.writerow([stat.epsilon, stat.mean, stat.std, stat.count])


def write_histogram_csv(path: str | Path, log: list[IterationRecord],
                        bin_width: float) -> None:
    epsilons = sorted({rec.epsilon for rec in log}, reverse=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epsilon", "bin_lo", "bin_hi", "count"])
        for eps in epsilons:
            for hbin in accuracy_histogram(log, eps, bin_width):
                writer.writerow([eps, hbin.lo, hbin.hi, hbin.count])


def write_q_summary_csvs(type_path: str | Path, field_path: str | Path,
                         q: QTable) -> None:
    by_type, by_field = q_summary(q)
    with open(type_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["depth", "layer_type", "mean_q", "count"])
        for row in by_type:
            writer.writerow([row.depth, row.group, row.mean_q, row.count])
    with open(field_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["depth", "conv_field", "mean_q", "count"])
        for row in by_field:
            writer.writerow([row.depth, row.group, row.mean_q, row.count])
