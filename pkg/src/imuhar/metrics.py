"""Classification metrics and 2-D PCA over embeddings.

Confusion matrices store raw counts (rows = true class, columns =
predicted); percentage views are a rendering. Macro F1 averages per-class
F1 with the 0/0 -> 0 convention, so classes without support still count
in the mean. Micro accuracy is trace/total.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, EmptyEvaluation


@dataclass(frozen=True, eq=False)
class EvalReport:
    confusion: np.ndarray  # (K, K) int counts
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    macro_f1: float
    micro_accuracy: float

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "macro_f1": self.macro_f1,
            "micro_accuracy": self.micro_accuracy,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def confusion_counts(predictions, targets, num_classes: int) -> np.ndarray:
    preds = np.asarray(predictions, dtype=np.int64)
    targs = np.asarray(targets, dtype=np.int64)
    if preds.shape != targs.shape or preds.ndim != 1:
        raise ValueError("predictions and targets must be equal-length 1-D")
    if preds.size and not ((0 <= preds) & (preds < num_classes)).all():
        raise ValueError("prediction out of range")
    if targs.size and not ((0 <= targs) & (targs < num_classes)).all():
        raise ValueError("target out of range")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (targs, preds), 1)
    return cm


def _safe_div(num, den):
    out = np.zeros_like(num, dtype=np.float64)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def evaluate(predictions, targets, num_classes: int) -> EvalReport:
    """Confusion matrix, per-class P/R/F1, macro F1, and micro accuracy."""
    cm = confusion_counts(predictions, targets, num_classes)
    total = cm.sum()
    if total == 0:
        raise EmptyEvaluation("no samples to evaluate")
    diag = np.diag(cm).astype(np.float64)
    precision = _safe_div(diag, cm.sum(axis=0))
    recall = _safe_div(diag, cm.sum(axis=1))
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return EvalReport(
        confusion=cm,
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        macro_f1=float(f1.mean()),
        micro_accuracy=float(diag.sum() / total),
    )


def render_confusion(cm: np.ndarray, mode: str = "counts") -> str:
    """CSV text of the matrix; row_percent normalizes each true-class row.

    Empty rows render as zeros rather than dividing by zero.
    """
    if mode not in ("counts", "row_percent"):
        raise ValueError(f"unknown render mode {mode!r}")
    if mode == "counts":
        rows = cm.astype(np.int64)
        lines = [",".join(str(v) for v in row) for row in rows]
    else:
        sums = cm.sum(axis=1, keepdims=True).astype(np.float64)
        pct = 100.0 * _safe_div(cm.astype(np.float64), np.broadcast_to(sums, cm.shape))
        lines = [",".join(f"{v:.2f}" for v in row) for row in pct]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class PcaResult:
    components: np.ndarray  # (2, o), orthonormal rows
    projections: np.ndarray  # (N, 2)
    explained_variance: np.ndarray  # (2,), non-increasing
    total_variance: float


def pca_2d(embeddings: np.ndarray) -> PcaResult:
    """Top-2 principal components via covariance eigendecomposition.

    Mean-centers the data, eigendecomposes the (population) covariance,
    and fixes each component's sign so its first nonzero coordinate is
    positive. Raises DegenerateData when the covariance has rank 0.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ValueError(f"need (N>=3, o>=2) embeddings, got {x.shape}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.maximum(evals[order], 0.0)
    evecs = evecs[:, order]
    if evals[0] <= 1e-30:
        raise DegenerateData("all embeddings identical; covariance has rank 0")
    comps = evecs[:, :2].T.copy()
    for row in comps:
        nz = np.nonzero(np.abs(row) > 1e-12)[0]
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return PcaResult(
        components=comps,
        projections=centered @ comps.T,
        explained_variance=evals[:2].copy(),
        total_variance=float(np.trace(cov)),
    )
