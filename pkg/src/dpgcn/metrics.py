"""Accuracy and per-class / macro-averaged precision, recall and F1."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np


@dataclass
class EvalReport:
    accuracy: float
    precision: list
    recall: list
    f1: list
    support: list
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_f1: float
    confusion: list  # rows = true class, columns = predicted class
    undefined: list  # class ids whose precision or recall had a zero denominator
    num_evaluated: int

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_matrix(pred, true, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def evaluate(predictions, labels, mask=None, num_classes: Optional[int] = None) -> EvalReport:
    """Score predictions on the nodes selected by ``mask``.

    0/0 precision or recall counts as 0 and the class is listed in
    ``undefined``. Macro F1 is the mean of per-class F1.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    sel = np.ones(true.shape, bool) if mask is None else np.asarray(mask, bool)
    if not sel.any():
        raise ValueError("evaluate: empty mask")
    pred, true = pred[sel], true[sel]
    if num_classes is None:
        num_classes = int(max(pred.max(), true.max())) + 1
    cm = confusion_matrix(pred, true, num_classes)
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(0).astype(np.float64)
    true_tot = cm.sum(1).astype(np.float64)
    prec = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    rec = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros_like(tp), where=denom > 0)
    undefined = sorted(set(np.nonzero(pred_tot == 0)[0]) | set(np.nonzero(true_tot == 0)[0]))
    n = int(sel.sum())
    return EvalReport(
        accuracy=float(tp.sum() / n),
        precision=prec.tolist(), recall=rec.tolist(), f1=f1.tolist(),
        support=true_tot.astype(int).tolist(),
        macro_precision=float(prec.mean()), macro_recall=float(rec.mean()),
        macro_f1=float(f1.mean()),
        weighted_f1=float((f1 * true_tot).sum() / n),
        confusion=cm.tolist(), undefined=[int(c) for c in undefined], num_evaluated=n,
    )


def constant_predictor_report(labels, mask=None, num_classes: Optional[int] = None) -> EvalReport:
    """Report for always predicting the majority class among the masked nodes."""
    true = np.asarray(labels, dtype=np.int64)
    sel = np.ones(true.shape, bool) if mask is None else np.asarray(mask, bool)
    majority = int(np.bincount(true[sel]).argmax())
    return evaluate(np.full_like(true, majority), true, sel, num_classes)
