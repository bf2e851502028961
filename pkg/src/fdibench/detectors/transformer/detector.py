"""Stream scoring and the Detector adapter for the window network.

Per-window, the anomaly score at position i is the reconstruction error
there weighted by softmax(-discrepancy) across the window: positions whose
attention pattern diverges from the learned locality prior get the weight,
so reconstruction error at those positions dominates the score.

Per-step scores average the position scores of every stride-1 window that
covers the step.  The decision rule is threshold-plus-run-length: a step
is attacked iff it belongs to a run of at least ``h_run`` consecutive
steps whose scores all exceed the threshold, and the onset is the first
step of the first such run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fdibench.detectors import Detector, DetectorRun, DetectorVerdict
from fdibench.errors import ContractViolation

from .config import CLASS_NAMES, N_CLASSES, NetConfig
from .network import _softmax, forward
from .params import load_checkpoint

_SCORE_BATCH = 256


def window_scores(config: NetConfig, params: dict, X: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Per-position anomaly scores and class logits for a window batch.

    Returns (scores (B, W), logits (B, n_classes)); scores are >= 0.
    """
    res = forward(config, params, X)
    recerr = ((res.recon - X) ** 2).mean(axis=2)        # (B, W)
    weight = _softmax(-res.disc)                        # (B, W)
    return weight * recerr, res.cls_logits


def stream_scores(config: NetConfig, params: dict, data: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Slide stride-1 windows over a residue stream.

    Returns per-step scores (T,) and per-step mean class logits (T, C),
    each step averaged over every window covering it.  The first W-1
    steps are covered by fewer than W windows; benchmark metrics exclude
    that prefix uniformly.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != config.n_channels:
        raise ContractViolation(
            f"residue stream must be (T, {config.n_channels}), got {data.shape}")
    t = data.shape[0]
    w = config.window
    if t < w:
        raise ContractViolation(
            f"residue stream has {t} steps, shorter than the window {w}")
    n_win = t - w + 1
    starts = np.arange(n_win)
    score_acc = np.zeros(t)
    logit_acc = np.zeros((t, N_CLASSES))
    count = np.zeros(t)
    for lo in range(0, n_win, _SCORE_BATCH):
        hi = min(lo + _SCORE_BATCH, n_win)
        batch = np.stack([data[s:s + w] for s in starts[lo:hi]])
        sc, logits = window_scores(config, params, batch)
        for i in range(w):
            rows = slice(lo + i, hi + i)
            score_acc[rows] += sc[:, i]
            logit_acc[rows] += logits
            count[rows] += 1
    return score_acc / count, logit_acc / count[:, None]


def apply_onset_rule(scores: np.ndarray, threshold: float, h_run: int
                     ) -> tuple[np.ndarray, int | None]:
    """Threshold + run-length decision.

    A step is attacked iff it lies in a run of >= h_run consecutive
    above-threshold steps; onset is the first step of the first such run.
    """
    if h_run < 1:
        raise ContractViolation("h_run must be >= 1")
    exceed = np.asarray(scores) > threshold
    attacked = np.zeros_like(exceed)
    onset = None
    t = exceed.size
    k = 0
    while k < t:
        if exceed[k]:
            j = k
            while j < t and exceed[j]:
                j += 1
            if j - k >= h_run:
                attacked[k:j] = True
                if onset is None:
                    onset = k
            k = j
        else:
            k += 1
    return attacked, onset


@dataclass
class TransformerDetector(Detector):
    """Detector adapter around a trained window network.

    ``threshold`` comes from calibrate_threshold on clean residues; the
    online ``step`` variant scores each step from the single window ending
    at it (the only one available causally), so a streaming alarm fires
    h_run - 1 steps after the offline onset of the same run.
    """

    config: NetConfig
    params: dict
    threshold: float = float("inf")
    h_run: int = 3
    detector_id: str = field(default="transformer", init=False)

    def __post_init__(self):
        if self.h_run < 1:
            raise ContractViolation("h_run must be >= 1")
        self.reset()

    @classmethod
    def from_checkpoint(cls, path: str, threshold: float = float("inf"),
                        h_run: int = 3) -> "TransformerDetector":
        config, params, _ = load_checkpoint(path)
        return cls(config=config, params=params, threshold=threshold,
                   h_run=h_run)

    # -- offline ----------------------------------------------------------

    def scores(self, residues: np.ndarray) -> np.ndarray:
        sc, _ = stream_scores(self.config, self.params, residues)
        return sc

    def run(self, residues: np.ndarray) -> DetectorRun:
        sc, logits = stream_scores(self.config, self.params, residues)
        attacked, _ = apply_onset_rule(sc, self.threshold, self.h_run)
        classes = [CLASS_NAMES[int(np.argmax(logits[k]))] if attacked[k] else None
                   for k in range(sc.size)]
        return DetectorRun(self.detector_id, attacked, sc, classes)

    def onset_report(self, residues: np.ndarray) -> dict:
        """Offline onset summary: first qualifying run and its class."""
        sc, logits = stream_scores(self.config, self.params, residues)
        attacked, onset = apply_onset_rule(sc, self.threshold, self.h_run)
        label = None
        if onset is not None:
            mean_logits = logits[attacked].mean(axis=0)
            label = CLASS_NAMES[int(np.argmax(mean_logits))]
        return {"onset": onset, "attacked": attacked, "scores": sc,
                "class": label}

    # -- online -----------------------------------------------------------

    def reset(self) -> None:
        self._buf: list[np.ndarray] = []
        self._streak = 0
        self._k = 0

    def step(self, residue: np.ndarray) -> DetectorVerdict:
        residue = np.asarray(residue, dtype=float)
        if residue.shape != (self.config.n_channels,):
            raise ContractViolation(
                f"residue must be ({self.config.n_channels},), "
                f"got {residue.shape}")
        k = self._k
        self._k += 1
        self._buf.append(residue)
        if len(self._buf) > self.config.window:
            self._buf.pop(0)
        if len(self._buf) < self.config.window:
            return DetectorVerdict(k=k, attacked=False, attack_class=None,
                                   score=0.0)
        window = np.stack(self._buf)[None]
        sc, logits = window_scores(self.config, self.params, window)
        score = float(sc[0, -1])
        self._streak = self._streak + 1 if score > self.threshold else 0
        attacked = self._streak >= self.h_run
        label = CLASS_NAMES[int(np.argmax(logits[0]))] if attacked else None
        return DetectorVerdict(k=k, attacked=attacked, attack_class=label,
                               score=score)

    def with_threshold(self, threshold: float) -> "TransformerDetector":
        return TransformerDetector(config=self.config, params=self.params,
                                   threshold=threshold, h_run=self.h_run)
