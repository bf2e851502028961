"""Detector interface shared by the sequential tests, the logistic baseline,
and the window-attention detector.

A detector exposes three views of the same decision rule:

* ``scores(residues)`` — the threshold-free statistic stream (alarm resets
  disabled). Calibration quantiles are taken on this stream.
* ``run(residues)`` — full offline pass with thresholds active; returns the
  per-step attacked flags, scores, and per-step class labels (None for binary
  detectors).
* ``step(residue)`` — online single-step variant used inside the resilient
  estimation loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DetectorVerdict:
    k: int
    attacked: bool
    attack_class: str | None
    score: float


@dataclass
class DetectorRun:
    detector_id: str
    attacked: np.ndarray   # (T,) bool
    scores: np.ndarray     # (T,) float
    classes: list          # (T,) str | None

    def verdict(self, k: int) -> DetectorVerdict:
        return DetectorVerdict(k=k, attacked=bool(self.attacked[k]),
                               attack_class=self.classes[k],
                               score=float(self.scores[k]))


class Detector:
    detector_id = "detector"

    def reset(self) -> None:
        raise NotImplementedError

    def step(self, residue: np.ndarray) -> DetectorVerdict:
        raise NotImplementedError

    def scores(self, residues: np.ndarray) -> np.ndarray:
        """Threshold-free score stream (no alarm-driven resets)."""
        raise NotImplementedError

    def run(self, residues: np.ndarray) -> DetectorRun:
        raise NotImplementedError

    def with_threshold(self, threshold: float) -> "Detector":
        raise NotImplementedError


from fdibench.detectors.classical import (BhtDetector, CusumDetector,  # noqa: E402
                                          SprtDetector)
from fdibench.detectors.calibrate import calibrate_threshold  # noqa: E402
from fdibench.detectors.logistic import LogisticDetector  # noqa: E402

__all__ = [
    "Detector", "DetectorRun", "DetectorVerdict",
    "CusumDetector", "SprtDetector", "BhtDetector",
    "LogisticDetector", "calibrate_threshold",
]
