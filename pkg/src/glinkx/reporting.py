"""JSON-lines metric logs and mean +/- std summaries.

Run rows look like ``{"kind": "run", "method": ..., "accuracy": ...}``;
summaries aggregate them per method with the sample standard deviation.
Summary rows pass through unchanged, so summarizing a summary is the
identity (idempotent reports).
"""

import json

import numpy as np

from .errors import ReportError


def write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                raise ReportError(f"{path}:{lineno}: invalid JSON")
    return rows


def sample_std(values):
    """Sample standard deviation (ddof=1); zero for a single value."""
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def binary_auc(scores, y_true):
    """Area under the ROC curve via the rank statistic (ties get average
    ranks).  ``scores`` are positive-class scores, ``y_true`` in {0, 1}."""
    scores = np.asarray(scores, dtype=np.float64)
    y_true = np.asarray(y_true)
    pos = y_true == 1
    n_pos = int(pos.sum())
    n_neg = y_true.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ReportError("AUC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty_like(scores)
    ranks[order] = np.arange(1, scores.shape[0] + 1)
    # average ranks over tied score groups
    sorted_scores = scores[order]
    lo = 0
    while lo < sorted_scores.shape[0]:
        hi = lo
        while (hi + 1 < sorted_scores.shape[0]
               and sorted_scores[hi + 1] == sorted_scores[lo]):
            hi += 1
        if hi > lo:
            ranks[order[lo : hi + 1]] = (lo + hi) / 2.0 + 1.0
        lo = hi + 1
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def summarize(rows, metric="accuracy"):
    """Aggregate run rows into one summary row per method."""
    if not rows:
        raise ReportError("no metric rows to summarize")
    passthrough = [r for r in rows if r.get("kind") == "summary"]
    runs = [r for r in rows if r.get("kind", "run") == "run"]
    by_method = {}
    for row in runs:
        if metric not in row:
            raise ReportError(f"run row missing metric {metric!r}: {row}")
        by_method.setdefault(row.get("method", "unknown"), []).append(
            float(row[metric])
        )
    # fresh aggregates win over stale pass-through summaries of the same
    # method, so a file holding runs plus their summary stays idempotent
    summaries = [s for s in passthrough
                 if s.get("method") not in by_method
                 or s.get("metric") != metric]
    for method in sorted(by_method):
        values = by_method[method]
        summaries.append({
            "kind": "summary",
            "method": method,
            "metric": metric,
            "mean": float(np.mean(values)),
            "std": sample_std(values),
            "count": len(values),
        })
    return summaries


def format_table(summaries):
    """Plain-text table of summary rows."""
    width = max([len(s["method"]) for s in summaries] + [6])
    lines = [f"{'method'.ljust(width)}  {'mean':>8}  {'std':>8}  {'n':>4}"]
    for s in summaries:
        lines.append(
            f"{s['method'].ljust(width)}  {s['mean']:8.4f}  {s['std']:8.4f}"
            f"  {s['count']:4d}"
        )
    return "\n".join(lines)
