"""Evaluation metrics: accuracy, macro one-vs-rest AUC, confusion matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from provnet.errors import DataError


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Count matrix with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def binary_auc(scores, positives) -> float:
    """Mann-Whitney AUC of scores for a boolean positive mask, ties averaged."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = positives.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC undefined: one class is empty")
    ranks = rankdata(scores)
    return (ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_ovr_auc(y_true, probs) -> float:
    """Macro-averaged one-vs-rest AUC over the classes present in y_true."""
    y_true = np.asarray(y_true)
    probs = np.asarray(probs)
    aucs = []
    for k in range(probs.shape[1]):
        pos = y_true == k
        if pos.any() and not pos.all():
            aucs.append(binary_auc(probs[:, k], pos))
    if not aucs:
        raise DataError("AUC undefined: need at least two classes present")
    return float(np.mean(aucs))


@dataclass
class EvalReport:
    accuracy: float
    auc: float
    confusion: np.ndarray  # rows = true class
    class_names: list
    per_class_precision: list
    per_class_recall: list

    @property
    def n_samples(self) -> int:
        return int(self.confusion.sum())

    def render_table(self) -> str:
        """Text confusion grid with per-row percentages, '1238 (96.41%)' cells."""
        names = self.class_names
        cells = []
        for i in range(len(names)):
            row_total = self.confusion[i].sum()
            row = []
            for j in range(len(names)):
                count = int(self.confusion[i, j])
                pct = 100.0 * count / row_total if row_total else 0.0
                row.append(f"{count} ({pct:.2f}%)")
            cells.append(row)
        width = max(
            max(len(c) for row in cells for c in row),
            max(len(n) for n in names),
        )
        header = " " * (width + 3) + " | ".join(n.rjust(width) for n in names)
        lines = [header]
        for name, row in zip(names, cells):
            lines.append(name.rjust(width + 2) + " " + " | ".join(c.rjust(width) for c in row))
        lines.append("")
        lines.append(f"accuracy: {self.accuracy:.4f}   auc: {self.auc:.4f}   n: {self.n_samples}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "auc": self.auc,
            "confusion": self.confusion.tolist(),
            "class_names": self.class_names,
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        return cls(
            accuracy=d["accuracy"],
            auc=d["auc"],
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            class_names=d["class_names"],
            per_class_precision=d["per_class_precision"],
            per_class_recall=d["per_class_recall"],
        )


def build_report(y_true, probs, class_names) -> EvalReport:
    y_true = np.asarray(y_true)
    probs = np.asarray(probs)
    if probs.shape[1] != len(class_names):
        raise DataError(
            f"probability width {probs.shape[1]} != {len(class_names)} classes"
        )
    y_pred = probs.argmax(axis=1)
    cm = confusion_matrix(y_true, y_pred, len(class_names))
    accuracy = float(np.trace(cm)) / cm.sum()
    auc = macro_ovr_auc(y_true, probs)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.diag(cm) / np.maximum(cm.sum(axis=0), 1)
        recall = np.diag(cm) / np.maximum(cm.sum(axis=1), 1)
    return EvalReport(
        accuracy=accuracy,
        auc=auc,
        confusion=cm,
        class_names=list(class_names),
        per_class_precision=[float(p) for p in precision],
        per_class_recall=[float(r) for r in recall],
    )
