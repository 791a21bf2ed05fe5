"""Classification metrics with out-of-control (any state > 1) as the
positive class, plus a multiclass confusion matrix for diagnostics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    macro_f1: float
    tp: int
    fp: int
    fn: int
    confusion: np.ndarray  # rows: true state, columns: predicted state (1-based, index 0 unused)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def f1_from_pr(precision: float, recall: float) -> float:
    return _ratio(2.0 * precision * recall, precision + recall)


def confusion_matrix(true_states, predictions, n_classes: int | None = None) -> np.ndarray:
    y = np.asarray(true_states, dtype=np.int64)
    yhat = np.asarray(predictions, dtype=np.int64)
    k = int(max(y.max(initial=1), yhat.max(initial=1))) if n_classes is None else n_classes
    C = np.zeros((k + 1, k + 1), dtype=np.int64)
    np.add.at(C, (y, yhat), 1)
    return C


def macro_f1(C: np.ndarray) -> float:
    """Mean one-vs-rest F1 over the states that occur in truth or prediction."""
    scores = []
    for s in range(1, C.shape[0]):
        tp = C[s, s]
        fp = C[:, s].sum() - tp
        fn = C[s, :].sum() - tp
        if tp + fp + fn == 0:
            continue
        scores.append(f1_from_pr(_ratio(tp, tp + fp), _ratio(tp, tp + fn)))
    return float(np.mean(scores)) if scores else 0.0


def compute_metrics(true_states, predictions) -> Metrics:
    """OC-vs-IC precision, recall and F1 (each 0 when undefined).

    Both inputs must already be restricted to the evaluated steps.
    """
    y = np.asarray(true_states, dtype=np.int64)
    yhat = np.asarray(predictions, dtype=np.int64)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    pos, pred_pos = y > 1, yhat > 1
    tp = int(np.count_nonzero(pos & pred_pos))
    fp = int(np.count_nonzero(~pos & pred_pos))
    fn = int(np.count_nonzero(pos & ~pred_pos))
    P, R = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    C = confusion_matrix(y, yhat)
    return Metrics(P, R, f1_from_pr(P, R), macro_f1(C), tp, fp, fn, C)
