from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdibench.errors import ContractViolation
from fdibench.metrics import (detection_delay, evaluate_stream, f1_score,
                              precision_recall_f1)


def labels_from(mask):
    return ["attack1" if m else "clean" for m in mask]


def test_crafted_counts_match_harmonic_mean_exactly():
    # 8 TP, 2 FP, 3 FN, 10 TN
    labels = labels_from([1] * 11 + [0] * 12)
    pred = np.array([1] * 8 + [0] * 3 + [1] * 2 + [0] * 10, dtype=bool)
    p, r, f1, counts = precision_recall_f1(pred, labels)
    assert counts == (8, 2, 3, 10)
    assert p == pytest.approx(8 / 10, abs=0)
    assert r == pytest.approx(8 / 11, abs=0)
    assert abs(f1 - 2.0 / (1.0 / p + 1.0 / r)) < 1e-12
    assert abs(f1 - 2 * 8 / (2 * 8 + 2 + 3)) < 1e-12


def test_paper_style_row_is_harmonic_consistent():
    """Published (P, R, F1) triples rounded to 2 decimals stay mutually
    consistent: some P, R inside the rounding pre-images give the printed F1."""
    f1 = f1_score(0.92, 0.93)
    assert f1 == pytest.approx(0.925, abs=5e-4)
    hi = f1_score(0.924999, 0.934999)
    assert round(hi, 2) == 0.93


def test_undefined_metrics_are_none():
    labels = labels_from([0, 0, 0])
    pred = np.zeros(3, dtype=bool)
    p, r, f1, _ = precision_recall_f1(pred, labels)
    assert p is None      # no positive predictions
    assert r is None      # no positive labels
    assert f1 is None


def test_zero_precision_gives_undefined_f1():
    labels = labels_from([1, 1, 0])
    pred = np.array([0, 0, 1], dtype=bool)
    p, r, f1, _ = precision_recall_f1(pred, labels)
    assert p == 0.0
    assert r == 0.0
    assert f1 is None


def test_detection_delay_counts_from_onset():
    labels = labels_from([0] * 10 + [1] * 10)
    pred = np.zeros(20, dtype=bool)
    pred[14] = True
    assert detection_delay(pred, labels) == 4
    pred[3] = True  # pre-onset verdicts don't count
    assert detection_delay(pred, labels) == 4


def test_detection_delay_not_detected_is_none():
    labels = labels_from([0] * 5 + [1] * 5)
    assert detection_delay(np.zeros(10, dtype=bool), labels) is None


def test_detection_delay_requires_attack():
    with pytest.raises(ContractViolation):
        detection_delay(np.zeros(4, dtype=bool), labels_from([0] * 4))


def test_eval_mask_restricts_counting():
    labels = labels_from([0, 0, 1, 1])
    pred = np.array([1, 0, 1, 1], dtype=bool)
    mask = np.array([0, 1, 1, 1], dtype=bool)  # drop the early false alarm
    report = evaluate_stream(pred, labels, mask)
    assert report.counts == (2, 0, 0, 1)
    assert report.precision == 1.0
    assert report.evaluated_steps == 3
    # delay still measured on the full stream
    assert report.delay == 0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=200))
def test_f1_between_min_and_max_of_p_r(pairs):
    pred = np.array([a for a, _ in pairs], dtype=bool)
    labels = labels_from([b for _, b in pairs])
    p, r, f1, _ = precision_recall_f1(pred, labels)
    if f1 is not None:
        assert min(p, r) - 1e-12 <= f1 <= max(p, r) + 1e-12


def test_length_mismatch_rejected():
    with pytest.raises(ContractViolation):
        precision_recall_f1(np.zeros(3, dtype=bool), labels_from([0, 1]))
