"""Sequential change detectors on whitened residue streams.

All three consume the full residue vector per step and emit one verdict per
step. They assume unit-variance channels (which is what whitening delivers)
and a shift alternative with mean mu1.

* CUSUM: per-channel one-sided cumulative sums of |r| - drift; alarm when the
  max over channels exceeds the threshold, then all sums reset to zero.
* SPRT: channel-summed Gaussian log-likelihood ratio random walk; attacked
  while Lambda > A (strict, like every alarm rule here, so an
  order-statistic threshold admits exactly the counted exceedances),
  reset (accept clean) at Lambda <= B, clean in between.
* BHT: Bayesian hypothesis test on consecutive length-L windows; the window
  posterior is assigned to every step it covers. Trailing steps that never
  fill a window stay clean with score 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from fdibench.detectors import Detector, DetectorRun, DetectorVerdict
from fdibench.errors import ContractViolation


def _as_2d(residues: np.ndarray) -> np.ndarray:
    r = np.asarray(residues, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    if r.ndim != 2:
        raise ContractViolation(f"residues must be (T, m), got shape {r.shape}")
    return r


@dataclass
class CusumDetector(Detector):
    drift: float = 1.0
    threshold: float = 5.0

    detector_id = "cusum"

    def __post_init__(self):
        if self.drift < 0:
            raise ContractViolation("cusum drift must be >= 0")
        self._g = None

    def reset(self):
        self._g = None

    def _ensure(self, m):
        if self._g is None or self._g.shape != (m,):
            self._g = np.zeros(m)

    def step(self, residue: np.ndarray) -> DetectorVerdict:
        r = np.atleast_1d(np.asarray(residue, dtype=float))
        self._ensure(r.size)
        self._g = np.maximum(0.0, self._g + np.abs(r) - self.drift)
        score = float(self._g.max())
        attacked = score > self.threshold
        if attacked:
            self._g[:] = 0.0
        return DetectorVerdict(k=-1, attacked=attacked, attack_class=None,
                               score=score)

    def scores(self, residues: np.ndarray) -> np.ndarray:
        r = _as_2d(residues)
        g = np.zeros(r.shape[1])
        out = np.zeros(r.shape[0])
        for k in range(r.shape[0]):
            g = np.maximum(0.0, g + np.abs(r[k]) - self.drift)
            out[k] = g.max()
        return out

    def run(self, residues: np.ndarray) -> DetectorRun:
        r = _as_2d(residues)
        self.reset()
        self._ensure(r.shape[1])
        attacked = np.zeros(r.shape[0], dtype=bool)
        scores = np.zeros(r.shape[0])
        for k in range(r.shape[0]):
            v = self.step(r[k])
            attacked[k] = v.attacked
            scores[k] = v.score
        return DetectorRun(self.detector_id, attacked, scores,
                           [None] * r.shape[0])

    def with_threshold(self, threshold: float) -> "CusumDetector":
        return CusumDetector(drift=self.drift, threshold=threshold)


@dataclass
class SprtDetector(Detector):
    mu1: float = 2.0
    alpha: float = 0.05
    beta: float = 0.05
    threshold: float | None = None  # upper boundary A; default from alpha/beta

    detector_id = "sprt"

    def __post_init__(self):
        if not (0 < self.alpha < 1 and 0 < self.beta < 1):
            raise ContractViolation("alpha and beta must lie in (0, 1)")
        if self.alpha + self.beta >= 1:
            raise ContractViolation("need alpha + beta < 1 for A > 0 > B")
        if self.threshold is None:
            self.threshold = math.log((1 - self.beta) / self.alpha)
        self._lambda = 0.0

    @property
    def upper(self) -> float:
        return float(self.threshold)

    @property
    def lower(self) -> float:
        return math.log(self.beta / (1 - self.alpha))

    def reset(self):
        self._lambda = 0.0

    def _increment(self, r: np.ndarray) -> float:
        # sum over channels of ln N(r; mu1, 1) - ln N(r; 0, 1)
        return float(np.sum(self.mu1 * r - 0.5 * self.mu1 * self.mu1))

    def step(self, residue: np.ndarray) -> DetectorVerdict:
        r = np.atleast_1d(np.asarray(residue, dtype=float))
        self._lambda += self._increment(r)
        score = self._lambda
        attacked = self._lambda > self.upper
        if not attacked and self._lambda <= self.lower:
            self._lambda = 0.0  # accepted clean; restart the walk
        return DetectorVerdict(k=-1, attacked=attacked, attack_class=None,
                               score=score)

    def scores(self, residues: np.ndarray) -> np.ndarray:
        # the Lambda walk does not depend on the upper boundary, so the
        # threshold-free stream is just the walk itself (with B-resets)
        r = _as_2d(residues)
        self.reset()
        out = np.zeros(r.shape[0])
        for k in range(r.shape[0]):
            out[k] = self.step(r[k]).score
        self.reset()
        return out

    def run(self, residues: np.ndarray) -> DetectorRun:
        r = _as_2d(residues)
        self.reset()
        attacked = np.zeros(r.shape[0], dtype=bool)
        scores = np.zeros(r.shape[0])
        for k in range(r.shape[0]):
            v = self.step(r[k])
            attacked[k] = v.attacked
            scores[k] = v.score
        return DetectorRun(self.detector_id, attacked, scores,
                           [None] * r.shape[0])

    def with_threshold(self, threshold: float) -> "SprtDetector":
        return SprtDetector(mu1=self.mu1, alpha=self.alpha, beta=self.beta,
                            threshold=threshold)


def bht_posterior(window: np.ndarray, mu1: float, prior_attack: float) -> float:
    """P(attack | window) with Gaussian N(0,1) vs N(mu1,1) likelihoods,
    summed over channels, computed in log space."""
    w = _as_2d(window)
    loglr = float(np.sum(mu1 * w - 0.5 * mu1 * mu1))
    log_odds = math.log(prior_attack / (1 - prior_attack)) + loglr
    # sigmoid, stable on both tails
    if log_odds >= 0:
        return 1.0 / (1.0 + math.exp(-log_odds))
    e = math.exp(log_odds)
    return e / (1.0 + e)


@dataclass
class BhtDetector(Detector):
    mu1: float = 2.0
    window: int = 20
    prior_attack: float = 0.5
    threshold: float = 0.5

    detector_id = "bht"

    def __post_init__(self):
        if self.window < 1:
            raise ContractViolation("bht window must be >= 1")
        if not 0 < self.prior_attack < 1:
            raise ContractViolation("prior_attack must lie in (0, 1)")
        self._buf = []
        self._last = None

    def reset(self):
        self._buf = []
        self._last = None

    def step(self, residue: np.ndarray) -> DetectorVerdict:
        """Online variant: verdict of the most recently completed window."""
        r = np.atleast_1d(np.asarray(residue, dtype=float))
        self._buf.append(r)
        if len(self._buf) < self.window:
            if self._last is None:
                return DetectorVerdict(-1, False, None, 0.0)
            return self._last
        post = bht_posterior(np.stack(self._buf), self.mu1, self.prior_attack)
        self._buf = []
        self._last = DetectorVerdict(-1, post > self.threshold, None, post)
        return self._last

    def scores(self, residues: np.ndarray) -> np.ndarray:
        r = _as_2d(residues)
        T = r.shape[0]
        out = np.zeros(T)
        for start in range(0, T - self.window + 1, self.window):
            post = bht_posterior(r[start:start + self.window], self.mu1,
                                 self.prior_attack)
            out[start:start + self.window] = post
        return out

    def run(self, residues: np.ndarray) -> DetectorRun:
        scores = self.scores(residues)
        T = scores.shape[0]
        attacked = scores > self.threshold
        # trailing partial window never scored: forced clean
        tail = T - (T % self.window) if self.window <= T else 0
        attacked[tail:] = False
        return DetectorRun(self.detector_id, attacked, scores, [None] * T)

    def with_threshold(self, threshold: float) -> "BhtDetector":
        return BhtDetector(mu1=self.mu1, window=self.window,
                           prior_attack=self.prior_attack, threshold=threshold)
