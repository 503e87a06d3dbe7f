"""Multiclass evaluation metrics computed from a confusion matrix and a
per-sample score matrix, plus the report assembly used by the CLI.

Conventions: confusion rows are true classes, columns are predictions.
Zero-denominator per-class precision/recall contributes 0 to the macro
average and is flagged rather than skipped, so imbalanced data cannot
silently inflate the averages. ROC-AUC is exact pair counting with half
credit for ties (one-vs-rest, macro averaged).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    ClassCountMismatch,
    EmptyMatrix,
    InvalidParam,
    LabelOutOfRange,
    NoValidClass,
)

__all__ = [
    "ConfusionMatrix",
    "ScoreMatrix",
    "confusion",
    "accuracy",
    "PrecisionRecallF1",
    "harmonic_f1",
    "macro_precision_recall_f1",
    "mcc",
    "mcc_is_degenerate",
    "roc_auc_per_class",
    "roc_auc_ovr_macro",
    "evaluate_model",
    "render_report_table",
]

REPORT_SCHEMA_VERSION = 1

REPORT_COLUMNS = ("Accuracy (%)", "Precision", "Recall", "F1-Score", "MCC-Score", "ROC-AUC Score")


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # (C, C) int64, rows true, cols predicted
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise InvalidParam(f"confusion matrix must be square, got {counts.shape}")
        if counts.min() < 0:
            raise InvalidParam("confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)
        counts.flags.writeable = False

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ScoreMatrix:
    probs: np.ndarray  # (n, C)
    true_labels: np.ndarray  # (n,)

    def __post_init__(self):
        probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        labels = np.ascontiguousarray(self.true_labels, dtype=np.int64)
        if probs.ndim != 2 or labels.shape != (probs.shape[0],):
            raise InvalidParam(f"scores {probs.shape} vs labels {labels.shape}")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-4):
            raise InvalidParam("score rows must sum to 1 within 1e-4")
        if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
            raise LabelOutOfRange("true labels must lie in [0, C)")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "true_labels", labels)
        probs.flags.writeable = False
        labels.flags.writeable = False

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


def confusion(true_labels, predicted_labels, num_classes: int) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise InvalidParam(f"label arrays differ in length: {t.shape} vs {p.shape}")
    if t.size and (t.min() < 0 or t.max() >= num_classes):
        raise LabelOutOfRange("true labels must lie in [0, C)")
    if p.size and (p.min() < 0 or p.max() >= num_classes):
        raise LabelOutOfRange("predicted labels must lie in [0, C)")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts)


def _require_nonempty(cm: ConfusionMatrix) -> None:
    if cm.total == 0:
        raise EmptyMatrix("confusion matrix has zero total count")


def accuracy(cm: ConfusionMatrix) -> float:
    _require_nonempty(cm)
    return float(np.trace(cm.counts)) / cm.total


def harmonic_f1(precision: float, recall: float) -> float:
    """2PR / (P + R), defined as 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


class PrecisionRecallF1(NamedTuple):
    precision: float
    recall: float
    f1: float
    flags: tuple[str, ...]


def macro_precision_recall_f1(cm: ConfusionMatrix) -> PrecisionRecallF1:
    """Unweighted class means; zero-denominator classes contribute 0, flagged."""
    _require_nonempty(cm)
    counts = cm.counts
    tp = np.diag(counts).astype(np.float64)
    pred = counts.sum(axis=0).astype(np.float64)  # TP + FP per class
    true = counts.sum(axis=1).astype(np.float64)  # TP + FN per class
    flags: list[str] = []
    prec = np.zeros(cm.num_classes)
    rec = np.zeros(cm.num_classes)
    f1 = np.zeros(cm.num_classes)
    for c in range(cm.num_classes):
        if pred[c] > 0:
            prec[c] = tp[c] / pred[c]
        else:
            flags.append(f"class {c}: no predicted samples, precision set to 0")
        if true[c] > 0:
            rec[c] = tp[c] / true[c]
        else:
            flags.append(f"class {c}: no true samples, recall set to 0")
        f1[c] = harmonic_f1(prec[c], rec[c])
    return PrecisionRecallF1(
        float(prec.mean()), float(rec.mean()), float(f1.mean()), tuple(flags)
    )


def _mcc_parts(cm: ConfusionMatrix):
    counts = cm.counts.astype(np.float64)
    c = np.trace(counts)
    s = counts.sum()
    p = counts.sum(axis=0)  # column sums (predicted)
    t = counts.sum(axis=1)  # row sums (true)
    cov = c * s - float(p @ t)
    var_p = s * s - float(p @ p)
    var_t = s * s - float(t @ t)
    return cov, var_p, var_t


def mcc(cm: ConfusionMatrix) -> float:
    """Multiclass Matthews correlation; 0 when either variance factor is 0."""
    _require_nonempty(cm)
    cov, var_p, var_t = _mcc_parts(cm)
    if var_p == 0 or var_t == 0:
        return 0.0
    return cov / np.sqrt(var_p * var_t)


def mcc_is_degenerate(cm: ConfusionMatrix) -> bool:
    _require_nonempty(cm)
    _, var_p, var_t = _mcc_parts(cm)
    return var_p == 0 or var_t == 0


def _auc_mann_whitney(pos: np.ndarray, neg: np.ndarray) -> float:
    # Normalized U statistic via average ranks; ties count half.
    scores = np.concatenate([pos, neg])
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    r_pos = ranks[: pos.size].sum()
    n_pos, n_neg = pos.size, neg.size
    u = r_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_per_class(scores: ScoreMatrix) -> tuple[dict[int, float], tuple[str, ...]]:
    """One-vs-rest AUC per class; classes lacking a positive or negative
    sample are excluded and flagged."""
    aucs: dict[int, float] = {}
    flags: list[str] = []
    labels = scores.true_labels
    for c in range(scores.num_classes):
        is_pos = labels == c
        n_pos = int(is_pos.sum())
        if n_pos == 0 or n_pos == labels.size:
            flags.append(f"class {c}: no positive/negative pair, excluded from ROC-AUC")
            continue
        col = scores.probs[:, c]
        aucs[c] = _auc_mann_whitney(col[is_pos], col[~is_pos])
    return aucs, tuple(flags)


def roc_auc_ovr_macro(scores: ScoreMatrix) -> float:
    aucs, _ = roc_auc_per_class(scores)
    if not aucs:
        raise NoValidClass("no class has both positive and negative samples")
    return float(np.mean(list(aucs.values())))


def evaluate_model(
    classifier,
    dataset,
    resolution: tuple[int, int] = (62, 62),
    batch_size: int = 64,
) -> dict:
    """Run batch prediction over a labeled dataset and assemble the report.

    The report carries the full-precision metric values; render_report_table
    applies the tabular formatting (accuracy as a 2-decimal percentage, other
    metrics as 4-decimal fractions).
    """
    from .bridge import predict_batch
    from .image import load_image, resize

    if not dataset.items:
        raise InvalidParam("dataset must be non-empty")
    if classifier.num_classes != dataset.num_classes:
        raise ClassCountMismatch(
            f"classifier has {classifier.num_classes} classes, dataset {dataset.num_classes}"
        )
    items = list(dataset.items)
    probs = np.empty((len(items), classifier.num_classes))
    for start in range(0, len(items), batch_size):
        chunk = items[start : start + batch_size]
        images = [resize(load_image(path), *resolution) for path, _ in chunk]
        probs[start : start + len(chunk)] = predict_batch(classifier, images)
    true_labels = np.array([label for _, label in items], dtype=np.int64)
    predicted = probs.argmax(axis=1)

    cm = confusion(true_labels, predicted, dataset.num_classes)
    scores = ScoreMatrix(probs, true_labels)
    prf = macro_precision_recall_f1(cm)
    aucs, auc_flags = roc_auc_per_class(scores)
    if not aucs:
        raise NoValidClass("no class has both positive and negative samples")
    flags = list(prf.flags) + list(auc_flags)
    if mcc_is_degenerate(cm):
        flags.append("MCC variance factor is 0, coefficient set to 0")
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "model_name": classifier.name,
        "n_samples": len(items),
        "accuracy_pct": accuracy(cm) * 100.0,
        "precision": prf.precision,
        "recall": prf.recall,
        "f1": prf.f1,
        "mcc": mcc(cm),
        "roc_auc": float(np.mean(list(aucs.values()))),
        "flags": flags,
    }


def render_report_table(reports: Sequence[dict] | dict) -> str:
    """Aligned text table with the standard column set and formatting."""
    if isinstance(reports, dict):
        reports = [reports]
    rows = []
    for r in reports:
        rows.append(
            [
                r["model_name"],
                f"{r['accuracy_pct']:.2f}",
                f"{r['precision']:.4f}",
                f"{r['recall']:.4f}",
                f"{r['f1']:.4f}",
                f"{r['mcc']:.4f}",
                f"{r['roc_auc']:.4f}",
            ]
        )
    header = ["Model", *REPORT_COLUMNS]
    widths = [max(len(header[i]), *(len(row[i]) for row in rows)) for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)).rstrip(),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines)
