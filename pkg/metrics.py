"""metrics.py

Binary classification metrics at a fixed 0.5 threshold, plus rank-based AUC.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from sklearn.metrics import confusion_matrix, roc_auc_score

from errors import DataValidationError

logger = logging.getLogger(__name__)

THRESHOLD = 0.5
METRIC_COLUMNS = ["accuracy", "recall", "precision", "specificity", "f1", "auc"]


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    recall: float
    precision: float
    specificity: float
    f1: float
    auc: Optional[float]
    auc_note: str = ""

    def as_row(self) -> Dict[str, object]:
        return asdict(self)


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int, auc: Optional[float] = None, auc_note: str = "") -> Metrics:
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(
        tp=tp, fp=fp, tn=tn, fn=fn,
        accuracy=_ratio(tp + tn, tp + fp + tn + fn),
        recall=recall,
        precision=precision,
        specificity=_ratio(tn, tn + fp),
        f1=f1,
        auc=auc,
        auc_note=auc_note,
    )


def rank_auc(labels: Sequence[int], scores: Sequence[float]) -> Optional[float]:
    """ROC AUC with midrank ties; None when only one class is present."""
    y = np.asarray(labels, dtype=np.int64)
    if np.unique(y).size < 2:
        return None
    return float(roc_auc_score(y, np.asarray(scores, dtype=np.float64)))


def compute_metrics(labels: Sequence[int], positive_probs: Sequence[float]) -> Metrics:
    y = np.asarray(labels, dtype=np.int64)
    s = np.asarray(positive_probs, dtype=np.float64)
    if y.size == 0:
        raise DataValidationError("cannot compute metrics on an empty split")
    if y.shape != s.shape:
        raise DataValidationError(f"{y.size} labels but {s.size} scores")
    pred = (s >= THRESHOLD).astype(np.int64)
    tn, fp, fn, tp = (int(v) for v in confusion_matrix(y, pred, labels=[0, 1]).ravel())
    auc = rank_auc(y, s)
    note = ""
    if auc is None:
        note = "single-class split"
        logger.warning("AUC undefined: split holds only label %d", int(y[0]))
    return metrics_from_counts(tp, fp, tn, fn, auc=auc, auc_note=note)
