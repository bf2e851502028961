"""Threshold calibration against a clean residue corpus.

The rule: smallest threshold whose empirical per-step false-alarm rate on the
corpus is <= target. Scores are taken with alarms disabled (no reset
feedback), so the quantile is an order statistic: with N scores and
allowed = floor(target * N) permitted alarms, the threshold is the
(allowed+1)-th largest score — the max for target 0, the empirical 99th
percentile for target 0.01 on 1e4 steps.

Alarm rules are strict (score > threshold) and alarm-driven resets only ever
lower later scores, so re-scoring with the chosen threshold can only produce
fewer alarms than the quantile promised. The re-scoring still runs as a
verification step and raises CalibrationInfeasibleError (with the achieved
rate) if a detector breaks that monotonicity assumption.
"""

from __future__ import annotations

import math

import numpy as np

from fdibench.detectors import Detector
from fdibench.errors import CalibrationInfeasibleError, ContractViolation

MIN_CORPUS_STEPS = 1000


def calibrate_threshold(detector: Detector, corpus, target: float,
                        min_steps: int = MIN_CORPUS_STEPS) -> float:
    """Pick the smallest threshold meeting the false-alarm target.

    corpus: one (T, m) array or a list of them, all clean (label-free).
    """
    if not 0.0 <= target <= 1.0:
        raise ContractViolation(f"target rate must lie in [0, 1], got {target}")
    if isinstance(corpus, np.ndarray):
        corpus = [corpus]
    if not corpus:
        raise ContractViolation("calibration corpus is empty")

    streams = [np.asarray(detector.scores(c), dtype=float) for c in corpus]
    scores = np.concatenate(streams)
    n = scores.size
    if n < min_steps:
        raise ContractViolation(
            f"calibration corpus has {n} steps, need >= {min_steps}")

    allowed = math.floor(target * n)
    ordered = np.sort(scores)
    idx = max(n - 1 - allowed, 0)
    threshold = float(ordered[idx])

    # verify on the same corpus with alarm feedback active
    tuned = detector.with_threshold(threshold)
    alarms = 0
    for c in corpus:
        alarms += int(tuned.run(c).attacked.sum())
    achieved = alarms / n
    if achieved > target:
        raise CalibrationInfeasibleError(
            f"no feasible threshold: achieved false-alarm rate {achieved:.4f} "
            f"> target {target:.4f} at threshold {threshold!r}",
            achieved_rate=achieved)
    return threshold
