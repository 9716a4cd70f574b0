"""Imbalance-aware classification metrics, all computed from a confusion matrix."""
from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateInputError, ParameterError


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts with rows = ground truth and columns = prediction."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ParameterError("y_true and y_pred differ in length")
    if y_true.size and (min(y_true.min(), y_pred.min()) < 0
                        or max(y_true.max(), y_pred.max()) >= n_classes):
        raise ParameterError("labels out of range")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _check(cm) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ParameterError(f"confusion matrix must be square, got {cm.shape}")
    if np.any(cm < 0):
        raise ParameterError("confusion matrix has negative counts")
    return cm.astype(np.float64)


def balanced_accuracy(cm) -> float:
    """Mean per-class recall."""
    cm = _check(cm)
    support = cm.sum(axis=1)
    if np.any(support == 0):
        raise ParameterError("every class needs at least one test sample")
    if np.all(support == support[0]):
        # equal supports: same value as plain accuracy, computed the same way so it matches bitwise
        return accuracy(cm)
    return float(np.mean(np.diag(cm) / support))


def accuracy(cm) -> float:
    cm = _check(cm)
    return float(np.trace(cm) / cm.sum())


def f1_scores(cm) -> dict[str, float]:
    """Macro and micro F1; a class with no predicted and no actual positives scores 0."""
    cm = _check(cm)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    pooled = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = 2 * tp.sum() / pooled if pooled > 0 else 0.0
    return {"macro": float(per_class.mean()), "micro": float(micro)}


def cohens_kappa(cm) -> float:
    cm = _check(cm)
    n = cm.sum()
    if n <= 0:
        raise ParameterError("empty confusion matrix")
    p_o = np.trace(cm) / n
    p_e = float(np.dot(cm.sum(axis=0), cm.sum(axis=1))) / n ** 2
    if np.isclose(p_e, 1.0, rtol=0, atol=1e-15):
        raise DegenerateInputError("chance agreement is 1; kappa undefined")
    return float((p_o - p_e) / (1 - p_e))


def summarize(cm) -> dict[str, float]:
    f1 = f1_scores(cm)
    return {
        "balanced_accuracy": balanced_accuracy(cm),
        "f1_macro": f1["macro"],
        "f1_micro": f1["micro"],
        "kappa": cohens_kappa(cm),
        "accuracy": accuracy(cm),
    }


def evaluate(y_true, y_pred, n_classes: int) -> dict[str, float]:
    return summarize(confusion_matrix(y_true, y_pred, n_classes))


def average_runs(runs: Iterable[Mapping[str, float]]) -> dict[str, float]:
    """Arithmetic mean of per-run metrics (not metrics of a pooled matrix)."""
    runs = list(runs)
    if not runs:
        raise ParameterError("no runs to average")
    keys = runs[0].keys()
    return {k: float(np.mean([r[k] for r in runs])) for k in keys}


def format_report(metrics: Mapping[str, float], **extra) -> str:
    """``key=value`` pairs on one line; floats with 6 decimals."""
    items = list(extra.items()) + list(metrics.items())
    return " ".join(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}" for k, v in items)


def format_table(rows: Sequence[Mapping], columns: Sequence[str], delimiter: str = "\t") -> str:
    lines = [delimiter.join(columns)]
    for row in rows:
        cells = []
        for c in columns:
            v = row.get(c, "")
            cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        lines.append(delimiter.join(cells))
    return "\n".join(lines) + "\n"
