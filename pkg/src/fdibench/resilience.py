"""Resilient estimation: detector verdicts gate which sensors the filter fuses.

The loop runs the filter with a per-step fusion mask.  An attacked verdict
drops the gps channels from the next updates; shadow residues keep flowing
for the masked channels, so the detector can watch them recover.  Once the
verdicts stay clean for ``n_clean`` consecutive steps the gps channels are
fused again.  Camera and heading channels are never maskable — they are the
secure sensors the filter falls back on.

Masking semantics: the verdict produced at step k takes effect at step k+1
(no retroactive correction of past updates).  While masked, gps channels
contribute exactly nothing to the update — the masked step is bitwise equal
to a filter built without those channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fdibench.detectors import Detector
from fdibench.dynamics import PlantModel
from fdibench.ekf import (EkfState, FilterConfig, ResidueSequence,
                          ekf_predict, ekf_update)
from fdibench.errors import ContractViolation
from fdibench.noise import NoiseModel
from fdibench.simulate import RunRecord
from fdibench.storage import float_repr, write_csv

N_CLEAN_DEFAULT = 100
MASKABLE_SENSOR = "gps"

EVENT_HEADER = ["step", "action", "sensor", "detector", "score"]


@dataclass
class ResilienceEvent:
    step: int
    action: str            # "mask" | "unmask"
    sensor: str            # which sensor group toggled
    detector_id: str
    score: float

    def row(self) -> list:
        return [self.step, self.action, self.sensor, self.detector_id,
                float_repr(self.score)]


@dataclass
class ResilienceState:
    """Fusion mask plus the bookkeeping that drives mask/unmask decisions."""

    mask: np.ndarray        # (m,) bool, True = channel is fused
    maskable: np.ndarray    # (m,) bool, channels the logic may disable
    n_clean: int = N_CLEAN_DEFAULT
    clean_streak: int = 0
    events: list = field(default_factory=list)
    last_k: int = -1

    @classmethod
    def for_model(cls, model: PlantModel, n_clean: int = N_CLEAN_DEFAULT
                  ) -> "ResilienceState":
        if n_clean < 1:
            raise ContractViolation(f"n_clean must be >= 1, got {n_clean}")
        maskable = np.zeros(model.m, dtype=bool)
        maskable[model.maskable_channels()] = True
        return cls(mask=np.ones(model.m, dtype=bool), maskable=maskable,
                   n_clean=n_clean)

    @property
    def sensor_masked(self) -> bool:
        return not bool(self.mask[self.maskable].all())


def apply_verdict(state: ResilienceState, verdict, k: int,
                  detector_id: str = "detector") -> ResilienceState:
    """Fold one verdict into the mask state (mutates and returns ``state``).

    Attacked: reset the clean streak and mask the gps channels if they are
    still fused (idempotent — an already-masked sensor logs nothing).
    Clean while masked: grow the streak; at exactly the n_clean-th
    consecutive clean verdict the sensor is unmasked and the event logged.
    """
    if k <= state.last_k:
        raise ContractViolation(
            f"verdicts must arrive in increasing step order "
            f"(got k={k} after {state.last_k})")
    state.last_k = k
    if verdict.attacked:
        state.clean_streak = 0
        if not state.sensor_masked:
            state.mask = state.mask & ~state.maskable
            state.events.append(ResilienceEvent(
                step=k, action="mask", sensor=MASKABLE_SENSOR,
                detector_id=detector_id, score=float(verdict.score)))
    elif state.sensor_masked:
        state.clean_streak += 1
        if state.clean_streak >= state.n_clean:
            state.mask = state.mask | state.maskable
            state.events.append(ResilienceEvent(
                step=k, action="unmask", sensor=MASKABLE_SENSOR,
                detector_id=detector_id, score=float(verdict.score)))
            state.clean_streak = 0
    return state


@dataclass
class ResilientRun:
    """Closed-loop filtering output."""

    residues: ResidueSequence    # shadow residues on all channels
    events: list                 # ResilienceEvent, ordered by step
    mask_history: np.ndarray     # (T, m) bool — mask used at each update
    masked_fraction: float       # fraction of steps with gps excluded

    def verdict_labels(self) -> list:
        return list(self.residues.labels)


def resilient_run(model: PlantModel, record: RunRecord, noise: NoiseModel,
                  detector: Detector, config: FilterConfig | None = None,
                  n_clean: int = N_CLEAN_DEFAULT) -> ResilientRun:
    """Filter a recorded run with detector-gated sensor fusion.

    Mirrors the open-loop residue generator step for step (update at k,
    then predict for k+1) so that a never-alarming detector reproduces it
    exactly.  The detector consumes the whitened shadow residues.
    """
    config = config or FilterConfig()
    if record.model_id != model.name:
        raise ContractViolation(
            f"record was produced by {record.model_id!r}, filter model is "
            f"{model.name!r}")
    Q = noise.process_cov
    R = noise.meas_cov()
    T = record.t_steps
    m = model.m
    static = (np.ones(m, dtype=bool) if config.active_mask is None
              else np.asarray(config.active_mask, dtype=bool))

    offset = (np.zeros(model.n) if config.init_offset is None
              else np.asarray(config.init_offset, dtype=float))
    state = EkfState(x=record.states[0] + offset,
                     P=config.p0_scale * np.eye(model.n), k=0)
    rstate = ResilienceState.for_model(model, n_clean)
    detector.reset()

    r_arr = np.zeros((T, m))
    rt_arr = np.zeros((T, m))
    est = np.zeros((T, model.n))
    mask_hist = np.zeros((T, m), dtype=bool)
    warm = np.arange(T) < config.warmup_steps

    for k in range(T):
        active = static & rstate.mask
        mask_hist[k] = active
        state, r, r_tilde, _ = ekf_update(
            model, state, record.measurements[k], R,
            active_mask=active, eig_floor=config.eig_floor)
        r_arr[k] = r
        rt_arr[k] = r_tilde
        est[k] = state.x
        verdict = detector.step(r_tilde)
        apply_verdict(rstate, verdict, k, detector_id=detector.detector_id)
        if k + 1 < T:
            state = ekf_predict(model, state, record.inputs[k], Q)

    maskable = rstate.maskable
    masked_steps = ~mask_hist[:, maskable].all(axis=1) if maskable.any() \
        else np.zeros(T, dtype=bool)
    meta = {
        "format_version": 1,
        "kind": "residues",
        "model": model.name,
        "t_steps": T,
        "warmup_steps": int(config.warmup_steps),
        "p0_scale": float(config.p0_scale),
        "channel_names": list(model.channel_names),
        "source_run": dict(record.meta),
        "resilience": {"n_clean": int(n_clean),
                       "detector": detector.detector_id,
                       "events": len(rstate.events)},
    }
    seq = ResidueSequence(model_id=model.name,
                          channel_names=model.channel_names,
                          r=r_arr, r_tilde=rt_arr, warmup=warm,
                          labels=list(record.labels), estimates=est,
                          meta=meta)
    return ResilientRun(residues=seq, events=rstate.events,
                        mask_history=mask_hist,
                        masked_fraction=float(masked_steps.mean()))


def save_events(events, csv_path: str | Path) -> str:
    """Event log CSV: step, action, sensor, detector, score."""
    return write_csv(csv_path, EVENT_HEADER, [e.row() for e in events])


def position_rmse(record: RunRecord, estimates: np.ndarray,
                  start: int = 0) -> float:
    """Root-mean-square position error of the estimates against truth."""
    if estimates.shape[0] != record.t_steps:
        raise ContractViolation(
            f"estimates cover {estimates.shape[0]} steps, record has "
            f"{record.t_steps}")
    if not 0 <= start < record.t_steps:
        raise ContractViolation(f"start {start} outside the run")
    err = estimates[start:, :3] - record.states[start:, :3]
    return float(np.sqrt(np.mean(np.sum(err ** 2, axis=1))))
