"""Logistic-regression baseline: the simplest learned detector that can sit in
the benchmark table between the sequential tests and the attention model.

Per-step features are the whitened residue vector and its absolute values;
training is full-batch gradient descent with a fixed iteration budget, so the
result is a pure function of (features, labels, hyperparameters).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fdibench.detectors import Detector, DetectorRun, DetectorVerdict
from fdibench.errors import ContractViolation


def _features(residues: np.ndarray) -> np.ndarray:
    r = np.asarray(residues, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    return np.concatenate([r, np.abs(r)], axis=1)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LogisticDetector(Detector):
    threshold: float = 0.5
    lr: float = 0.5
    iters: int = 300
    l2: float = 1e-4

    detector_id = "logistic"

    weights: np.ndarray | None = None
    bias: float = 0.0
    feat_mean: np.ndarray | None = None
    feat_std: np.ndarray | None = None

    def fit(self, residues_list, labels_list) -> "LogisticDetector":
        """Train on per-step binary labels (any attack class = positive)."""
        feats = np.concatenate([_features(r) for r in residues_list])
        ys = np.concatenate([
            np.array([lab != "clean" for lab in labels], dtype=float)
            for labels in labels_list])
        if feats.shape[0] != ys.shape[0]:
            raise ContractViolation("features and labels misaligned")
        self.feat_mean = feats.mean(axis=0)
        self.feat_std = feats.std(axis=0)
        self.feat_std[self.feat_std == 0] = 1.0
        x = (feats - self.feat_mean) / self.feat_std

        w = np.zeros(x.shape[1])
        b = 0.0
        n = x.shape[0]
        for _ in range(self.iters):
            p = _sigmoid(x @ w + b)
            err = p - ys
            gw = x.T @ err / n + self.l2 * w
            gb = float(err.mean())
            w -= self.lr * gw
            b -= self.lr * gb
        self.weights = w
        self.bias = b
        return self

    def _check_fitted(self):
        if self.weights is None:
            raise ContractViolation("logistic detector used before fit()")

    def scores(self, residues: np.ndarray) -> np.ndarray:
        self._check_fitted()
        x = (_features(residues) - self.feat_mean) / self.feat_std
        return _sigmoid(x @ self.weights + self.bias)

    def run(self, residues: np.ndarray) -> DetectorRun:
        s = self.scores(residues)
        return DetectorRun(self.detector_id, s > self.threshold, s,
                           [None] * s.shape[0])

    def step(self, residue: np.ndarray) -> DetectorVerdict:
        s = float(self.scores(np.atleast_1d(residue)[None, :])[0])
        return DetectorVerdict(k=-1, attacked=s > self.threshold,
                               attack_class=None, score=s)

    def reset(self):
        pass

    def with_threshold(self, threshold: float) -> "LogisticDetector":
        clone = LogisticDetector(threshold=threshold, lr=self.lr,
                                 iters=self.iters, l2=self.l2)
        clone.weights = self.weights
        clone.bias = self.bias
        clone.feat_mean = self.feat_mean
        clone.feat_std = self.feat_std
        return clone
