"""Classification accuracy metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List

import numpy as np

from .errors import ContractError


@dataclass
class MetricsReport:
    confusion: np.ndarray  # rows = truth, cols = prediction
    per_class_accuracy: np.ndarray
    oa: float
    aa: float
    f1: float
    kappa: float
    seconds: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion.tolist()
        d["per_class_accuracy"] = [float(x) for x in self.per_class_accuracy]
        return d

    def to_text(self) -> str:
        lines = [
            f"OA {self.oa:.6f}",
            f"AA {self.aa:.6f}",
            f"F1 {self.f1:.6f}",
            f"Kappa {self.kappa:.6f}",
        ]
        for c, acc in enumerate(self.per_class_accuracy, start=1):
            lines.append(f"class {c} {acc:.6f}")
        return "\n".join(lines) + "\n"


def confusion_matrix(pred, truth, n_classes: int) -> np.ndarray:
    """Counts with labels in 1..C; rows index the truth."""
    p = np.asarray(pred, dtype=np.int64)
    t = np.asarray(truth, dtype=np.int64)
    if p.shape != t.shape:
        raise ContractError(f"{p.size} predictions for {t.size} truths")
    for name, arr in (("prediction", p), ("truth", t)):
        if arr.size and (arr.min() < 1 or arr.max() > n_classes):
            raise ContractError(f"{name} labels must lie in [1, {n_classes}]")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t - 1, p - 1), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray, seconds: float = 0.0) -> MetricsReport:
    """OA, AA (mean recall over classes with test samples), macro-F1, Cohen's kappa.

    Macro-F1 averages over classes appearing in truth or prediction, with F1 = 0
    where precision + recall = 0. Kappa is 0 when chance agreement is 1.
    """
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise ContractError("empty confusion matrix")
    rows = cm.sum(axis=1)
    cols = cm.sum(axis=0)
    diag = np.diag(cm)
    recall = np.divide(diag, rows, out=np.zeros_like(diag), where=rows > 0)
    precision = np.divide(diag, cols, out=np.zeros_like(diag), where=cols > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(diag), where=denom > 0)
    oa = diag.sum() / total
    aa = recall[rows > 0].mean()
    seen = (rows > 0) | (cols > 0)
    pe = (rows * cols).sum() / total**2
    kappa = (oa - pe) / (1.0 - pe) if pe < 1.0 else 0.0
    return MetricsReport(
        confusion=cm.astype(np.int64),
        per_class_accuracy=recall,
        oa=float(oa),
        aa=float(aa),
        f1=float(f1[seen].mean()),
        kappa=float(kappa),
        seconds=seconds,
    )


def compute_metrics(pred, truth, n_classes: int, seconds: float = 0.0) -> MetricsReport:
    return metrics_from_confusion(confusion_matrix(pred, truth, n_classes), seconds)


def summarize(reports: List[MetricsReport]) -> dict:
    """Mean and sample standard deviation of each scalar metric across runs."""
    out = {}
    for key in ("oa", "aa", "f1", "kappa"):
        vals = np.array([getattr(r, key) for r in reports])
        out[key] = (float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else 0.0)
    return out
