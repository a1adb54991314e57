"""Plain-text renderings of attribution tables, metric reports and detector results."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np

from .attrib import DISPLAY_NAMES
from .xmetrics import METRIC_TITLES, MetricReport

N_BUCKETS = 5


def intensity_bucket(score: float, scale: float) -> int:
    """1..5 by |score| / scale in equal fifths; 0 for an exact zero."""
    if score == 0 or not scale > 0:
        return 0
    return int(min(N_BUCKETS, max(1, np.ceil(N_BUCKETS * abs(score) / scale))))


def shade(score: float, scale: float) -> str:
    """Signed score plus a bar: ``+`` marks repeat for positive, ``-`` for negative."""
    b = intensity_bucket(score, scale)
    mark = ("+" if score > 0 else "-") * b
    return f"{score:+.4f} {mark:<{N_BUCKETS}}"


def _grid(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: " | ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep, *map(fmt, rows)]) + "\n"


def title(method: str) -> str:
    return DISPLAY_NAMES.get(method, method)


def render_ranking_table(rankings: Mapping[str, Sequence], feature_names: Sequence[str], k: int) -> str:
    """Columns are methods, row r holds each method's r-th most relevant feature."""
    methods = list(rankings)
    header = ["rank"] + [title(m) for m in methods]
    rows = []
    for r in range(k):
        row = [str(r + 1)]
        for m in methods:
            ranked = rankings[m]
            if r < len(ranked):
                idx, score = ranked[r]
                row.append(f"{feature_names[idx]} ({score:+.4f})")
            else:
                row.append("")
        rows.append(row)
    return _grid(header, rows)


def render_feature_table(scores: Mapping[str, np.ndarray], row_labels: Sequence[str],
                         label_header: str = "feature") -> str:
    """One row per feature (or event position), one shaded column per method.

    Intensity is relative to the largest absolute score in each column.
    """
    methods = list(scores)
    scales = {m: float(np.max(np.abs(scores[m]))) if len(scores[m]) else 0.0 for m in methods}
    header = [label_header] + [title(m) for m in methods]
    rows = [[lab] + [shade(float(scores[m][i]), scales[m]) for m in methods]
            for i, lab in enumerate(row_labels)]
    return _grid(header, rows)


def render_counterfactual(original: Sequence[int], reference: Sequence[int],
                          event_names: Optional[Mapping[int, str]] = None) -> str:
    """Anomalous and benign sequences side by side; ``!=`` marks replaced events."""
    names = event_names or {}
    header = ["Anomaly Event ID", "Event description", "Diff", "Benign Event ID", "Event description"]
    rows = []
    for a, b in zip(original, reference):
        rows.append([str(int(a)), names.get(int(a), f"event {int(a)}"), "!=" if a != b else "",
                     str(int(b)), names.get(int(b), f"event {int(b)}")])
    return _grid(header, rows)


def render_metric_report(report: MetricReport) -> str:
    header = ["Method/Metrics"] + [
        METRIC_TITLES.get(m, m) + ("↑" if report.directions[m] else "↓") for m in report.cols
    ] + ["Rating"]
    rows = []
    for i, r in enumerate(report.rows):
        rows.append([title(r)] + [f"{v:.3f}" for v in report.values[i]] + ["*" * int(report.rating[r])])
    return _grid(header, rows)


def render_detector_summary(summary: Mapping[str, float], rule: Mapping) -> str:
    header = ["statistic", "direction", "threshold", "precision", "recall", "f1", "auroc"]
    row = [rule["statistic"], rule["direction"], f"{rule['threshold']:.6g}",
           f"{100 * summary['precision']:.2f}%", f"{100 * summary['recall']:.2f}%",
           f"{summary['f1']:.4f}", f"{summary['auroc']:.4f}"]
    return _grid(header, [row])


def render_histogram(rows: Sequence) -> str:
    header = ["bin_lo", "bin_hi", "benign", "adversarial"]
    return _grid(header, [[f"{lo:.6g}", f"{hi:.6g}", str(b), str(a)] for lo, hi, b, a in rows])
