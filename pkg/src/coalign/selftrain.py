"""Pseudo-labeling: assignment, per-class top-k% confidence selection, and the
epoch schedule that grows k. Selection is always within each pseudo-class so
minority classes cannot be crowded out by easy-to-transfer ones.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as model_mod
from .errors import EstimationError
from .model import ModelParams


@dataclass(frozen=True)
class KSchedule:
    """k(epoch) = min(k0 + epoch * k_step, k_max), in percent."""

    k0: float = 5.0
    k_step: float = 5.0
    k_max: float = 30.0


K_SCHEDULE_PRESETS = {
    "default": KSchedule(5.0, 5.0, 30.0),
    "fast-start": KSchedule(20.0, 5.0, 50.0),
    "low-cap": KSchedule(5.0, 5.0, 10.0),
}


@dataclass
class PseudoLabelSet:
    """Per-target-sample pseudo-label, confidence, selection mask, and the k used."""

    labels: np.ndarray
    confidence: np.ndarray
    mask: np.ndarray
    k: float
    num_classes: int


def advance_k(schedule: KSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    return min(schedule.k0 + epoch * schedule.k_step, schedule.k_max)


def assign_pseudo_labels(params: ModelParams, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """argmax class and its probability per row; ties go to the lowest class index."""
    probs = model_mod.classify(params, features).probabilities
    labels = probs.argmax(axis=1).astype(np.int64)
    confidence = probs[np.arange(len(labels)), labels]
    return labels, confidence


def _per_class_quota(k: float, class_size: int) -> int:
    # ceil(k% of the class); integer arithmetic when k is integral so that
    # e.g. k=30 of 10 samples is exactly 3
    if k <= 0 or class_size == 0:
        return 0
    if float(k).is_integer():
        return (int(k) * class_size + 99) // 100
    return math.ceil(k * class_size / 100.0)


def select_top_k_per_class(
    labels: np.ndarray, confidence: np.ndarray, k: float, num_classes: int
) -> PseudoLabelSet:
    """Mask the ceil(k%) most confident samples within every pseudo-class.

    Confidence ties are broken by sample index (lower index wins). Every
    nonempty pseudo-class keeps at least one sample whenever k > 0.
    """
    if not 0 <= k <= 100:
        raise ValueError(f"k must be within [0, 100], got {k}")
    labels = np.asarray(labels, dtype=np.int64)
    confidence = np.asarray(confidence, dtype=np.float64)
    mask = np.zeros(len(labels), dtype=np.int64)
    for cls in range(num_classes):
        members = np.flatnonzero(labels == cls)
        quota = _per_class_quota(k, len(members))
        if quota == 0:
            continue
        order = np.lexsort((members, -confidence[members]))
        mask[members[order[:quota]]] = 1
    return PseudoLabelSet(labels, confidence, mask, float(k), num_classes)


def estimate_target_distribution(pseudo: PseudoLabelSet) -> np.ndarray:
    """Class proportions among the masked samples."""
    selected = pseudo.labels[pseudo.mask == 1]
    if selected.size == 0:
        raise EstimationError("no samples selected; cannot estimate the label distribution")
    counts = np.bincount(selected, minlength=pseudo.num_classes).astype(np.float64)
    return counts / counts.sum()


def write_pseudo_csv(pseudo: PseudoLabelSet, path: str | Path) -> None:
    """Audit dump: one row per target sample (id, label, confidence, mask)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "pseudo_label", "confidence", "mask"])
        for i in range(len(pseudo.labels)):
            writer.writerow([i, int(pseudo.labels[i]), f"{pseudo.confidence[i]:.12g}", int(pseudo.mask[i])])
