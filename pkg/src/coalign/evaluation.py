"""Metrics and reporting: confusion counts, per-class mean accuracy,
label-distribution comparison, a 2-component linear projection for feature
inspection, and method-by-task result tables.
"""

from __future__ import annotations

import csv
import io
import warnings

import numpy as np

from .errors import MetricError, TableError, UsageError
from .objectives import js_distance, js_divergence


def confusion_matrix(true_labels: np.ndarray, predicted: np.ndarray, num_classes: int) -> np.ndarray:
    """counts[i, j] = number of class-i samples predicted as class j."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if true_labels.shape != predicted.shape:
        raise UsageError(f"{true_labels.shape} true labels vs {predicted.shape} predictions")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (true_labels, predicted), 1)
    return counts


def per_class_mean_accuracy(cm: np.ndarray) -> float:
    """Mean over classes of the within-class accuracy; robust to imbalance."""
    cm = np.asarray(cm)
    row_sums = cm.sum(axis=1)
    missing = np.flatnonzero(row_sums == 0)
    if missing.size:
        raise MetricError(f"class {int(missing[0])} has no samples in the evaluation set")
    return float((np.diag(cm) / row_sums).mean())


def overall_accuracy(cm: np.ndarray) -> float:
    cm = np.asarray(cm)
    return float(np.diag(cm).sum() / cm.sum())


def compare_distributions(estimated: np.ndarray, true: np.ndarray) -> dict[str, float]:
    """JS distance (sqrt of the divergence, natural log), the divergence
    itself, and the L1 distance."""
    divergence = js_divergence(estimated, true)
    return {
        "js_distance": js_distance(estimated, true),
        "js_divergence": divergence,
        "l1": float(np.abs(np.asarray(estimated, dtype=np.float64) - np.asarray(true)).sum()),
    }


def _power_iteration(cov: np.ndarray, rng: np.random.Generator, iterations: int) -> tuple[np.ndarray, float]:
    v = rng.standard_normal(cov.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(iterations):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        v = w / norm
    # canonical sign: largest-magnitude entry positive
    pivot = np.argmax(np.abs(v))
    if v[pivot] < 0:
        v = -v
    return v, float(v @ cov @ v)


def project_features_2d(
    embeddings: np.ndarray, *, iterations: int = 300, seed: int = 0
) -> np.ndarray:
    """Mean-centered projection onto the two leading covariance eigenvectors,
    found by power iteration with deflation. Deterministic for a fixed seed
    and iteration count. A rank-deficient second direction is zeroed."""
    x = np.ascontiguousarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise UsageError(f"need at least 3 samples, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    rng = np.random.default_rng(seed)
    v1, lam1 = _power_iteration(cov, rng, iterations)
    deflated = cov - lam1 * np.outer(v1, v1)
    v2, lam2 = _power_iteration(deflated, rng, iterations)
    first = centered @ v1
    if lam2 <= 1e-12 * max(lam1, 1.0):
        warnings.warn("covariance is rank deficient; second component zeroed")
        second = np.zeros_like(first)
    else:
        second = centered @ v2
    return np.column_stack([first, second])


def _final_accuracy(report: dict) -> float:
    try:
        return report["metrics"]["final"]["per_class_mean_accuracy"]
    except (KeyError, TypeError) as exc:
        raise TableError(f"report missing final per-class mean accuracy: {exc}") from exc


def _method_label(report: dict) -> str:
    config = report.get("config", {})
    label = config.get("method", "?")
    for flag in config.get("ablations") or []:
        label += f" [{flag}]"
    if config.get("sampler") == "natural":
        label += " [natural sampler]"
    return label


def _task_label(report: dict) -> str:
    config = report.get("config", {})
    if config.get("task"):
        return str(config["task"])
    shift = (config.get("data") or {}).get("shift") or {}
    if "degree" in shift:
        return f"d={shift['degree']:g}%"
    return "task"


def render_table(reports: list[dict], fmt: str = "markdown") -> str:
    """Method-by-task grid of final per-class mean accuracy (percent).

    Reports sharing a (method, task) cell are averaged over their seeds.
    """
    if fmt not in ("csv", "markdown"):
        raise UsageError(f"format must be csv or markdown, got {fmt!r}")
    if not reports:
        raise TableError("no reports to render")
    schemas = {tuple(sorted(r.get("metrics", {}).get("final", {}))) for r in reports}
    if len(schemas) != 1:
        raise TableError(f"reports have mismatched final-metric schemas: {sorted(schemas)}")

    cells: dict[tuple[str, str], list[float]] = {}
    for report in reports:
        key = (_method_label(report), _task_label(report))
        cells.setdefault(key, []).append(_final_accuracy(report))
    methods = sorted({m for m, _ in cells})
    tasks = sorted({t for _, t in cells})

    header = ["method"] + tasks
    rows = []
    for m in methods:
        row = [m]
        for t in tasks:
            values = cells.get((m, t))
            row.append(f"{100.0 * float(np.mean(values)):.2f}" if values else "")
        rows.append(row)

    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = [
        "| " + " | ".join(str(h).ljust(w) for h, w in zip(header, widths)) + " |",
        "| " + " | ".join("-" * w for w in widths) + " |",
    ]
    for row in rows:
        lines.append("| " + " | ".join(str(v).ljust(w) for v, w in zip(row, widths)) + " |")
    return "\n".join(lines) + "\n"
