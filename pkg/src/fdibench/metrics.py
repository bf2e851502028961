"""Verdict-vs-label scoring with exact count arithmetic.

Counts are integers; ratios happen exactly once, at the final float division.
Undefined ratios (zero denominator) are None, never silently 0 — the table
renderer turns them into an em-dash.

The binary reduction treats any attack class as positive. F1 follows the
harmonic-mean form F1 = 2 / (1/P + 1/R) and is defined only when both P and R
are defined and nonzero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fdibench.attacks import LABEL_CLEAN
from fdibench.errors import ContractViolation


def f1_score(precision: float, recall: float) -> float | None:
    if precision is None or recall is None:
        return None
    if precision <= 0.0 or recall <= 0.0:
        return None
    return 2.0 / (1.0 / precision + 1.0 / recall)


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float | None
    recall: float | None
    f1: float | None
    fa_rate: float | None      # fp / (fp + tn): per-step false alarms
    delay: int | None          # first attacked verdict at/after onset, else None
    episode_detected: bool
    evaluated_steps: int

    @property
    def counts(self) -> tuple:
        return (self.tp, self.fp, self.fn, self.tn)


def _as_positive(labels) -> np.ndarray:
    return np.array([lab != LABEL_CLEAN for lab in labels], dtype=bool)


def precision_recall_f1(attacked: np.ndarray, labels,
                        eval_mask: np.ndarray | None = None):
    """(precision, recall, f1, counts) over steps selected by eval_mask."""
    attacked = np.asarray(attacked, dtype=bool)
    positive = _as_positive(labels)
    if attacked.shape != positive.shape:
        raise ContractViolation(
            f"verdicts ({attacked.shape}) and labels ({positive.shape}) differ")
    if eval_mask is None:
        eval_mask = np.ones_like(attacked)
    eval_mask = np.asarray(eval_mask, dtype=bool)
    a, p = attacked[eval_mask], positive[eval_mask]

    tp = int(np.sum(a & p))
    fp = int(np.sum(a & ~p))
    fn = int(np.sum(~a & p))
    tn = int(np.sum(~a & ~p))
    precision = tp / (tp + fp) if (tp + fp) > 0 else None
    recall = tp / (tp + fn) if (tp + fn) > 0 else None
    return precision, recall, f1_score(precision, recall), (tp, fp, fn, tn)


def detection_delay(attacked: np.ndarray, labels) -> int | None:
    """Steps from label onset to the first attacked verdict at/after it.

    Raises if the labels contain no attack at all.
    """
    positive = _as_positive(labels)
    if not positive.any():
        raise ContractViolation("labels contain no attacked steps")
    k0 = int(np.argmax(positive))
    attacked = np.asarray(attacked, dtype=bool)
    after = np.where(attacked[k0:])[0]
    if after.size == 0:
        return None
    return int(after[0])


def evaluate_stream(attacked: np.ndarray, labels,
                    eval_mask: np.ndarray | None = None) -> MetricsReport:
    precision, recall, f1, (tp, fp, fn, tn) = precision_recall_f1(
        attacked, labels, eval_mask)
    fa = fp / (fp + tn) if (fp + tn) > 0 else None
    positive = _as_positive(labels)
    delay = detection_delay(attacked, labels) if positive.any() else None
    return MetricsReport(
        tp=tp, fp=fp, fn=fn, tn=tn,
        precision=precision, recall=recall, f1=f1, fa_rate=fa,
        delay=delay, episode_detected=delay is not None,
        evaluated_steps=int(tp + fp + fn + tn),
    )
