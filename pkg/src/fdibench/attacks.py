"""Additive measurement-injection attacks.

Attacks are sparse (gps channels only) and persistent: from the onset step
until the optional end step every selected channel carries a nonzero
injection. Two shapes ship:

* ``attack1`` — constant bias theta on each selected channel,
* ``attack2`` — ramp alpha*(k - k0) on each selected channel (zero at the
  onset step itself by construction; labels still start at k0).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from fdibench.dynamics import ChannelKind, PlantModel
from fdibench.errors import ContractViolation


class AttackKind(str, enum.Enum):
    NONE = "none"
    BIAS = "attack1"
    RAMP = "attack2"


LABEL_CLEAN = "clean"


@dataclass
class AttackModel:
    """Description of one attack on one plant's measurement vector.

    mask: boolean length-m vector; True entries must all be gps channels.
    magnitude: bias theta (attack1) or per-step slope alpha (attack2).
    start: onset step k0. end: first step at which the injection stops
    (None = persists to the end of the run).
    """

    kind: AttackKind
    mask: np.ndarray
    magnitude: float
    start: int
    end: int | None = None

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.kind != AttackKind.NONE:
            if self.start < 0:
                raise ContractViolation(f"attack start must be >= 0, got {self.start}")
            if self.end is not None and self.end <= self.start:
                raise ContractViolation("attack end must be > start")
            if not self.mask.any():
                raise ContractViolation("attack mask selects no channels")

    def validate_for(self, model: PlantModel) -> None:
        if self.mask.shape != (model.m,):
            raise ContractViolation(
                f"attack mask has shape {self.mask.shape}, model has m={model.m}"
            )
        if self.kind == AttackKind.NONE:
            return
        allowed = np.zeros(model.m, dtype=bool)
        allowed[model.channels_of(ChannelKind.GPS_POS)] = True
        if np.any(self.mask & ~allowed):
            bad = [model.channel_names[i]
                   for i in np.where(self.mask & ~allowed)[0]]
            raise ContractViolation(
                f"attack mask selects non-gps channels: {bad} (attacks are "
                f"restricted to gps channels)"
            )

    def label_at(self, k: int) -> str:
        if self.kind == AttackKind.NONE or k < self.start:
            return LABEL_CLEAN
        if self.end is not None and k >= self.end:
            return LABEL_CLEAN
        return self.kind.value

    @classmethod
    def none(cls, m: int) -> "AttackModel":
        return cls(kind=AttackKind.NONE, mask=np.zeros(m, dtype=bool),
                   magnitude=0.0, start=0)


def gps_mask(model: PlantModel, axes: tuple = (0, 1, 2)) -> np.ndarray:
    """Mask selecting the given gps axes (default: all three)."""
    mask = np.zeros(model.m, dtype=bool)
    gps = model.channels_of(ChannelKind.GPS_POS)
    for a in axes:
        mask[gps[a]] = True
    return mask


def generate_attack(attack: AttackModel, k: int, m: int) -> np.ndarray:
    """Injection vector d_k (length m) at step k."""
    if attack.mask.shape != (m,):
        raise ContractViolation(
            f"attack mask has shape {attack.mask.shape}, expected ({m},)"
        )
    d = np.zeros(m)
    if attack.kind == AttackKind.NONE or k < attack.start:
        return d
    if attack.end is not None and k >= attack.end:
        return d
    if attack.kind == AttackKind.BIAS:
        d[attack.mask] = attack.magnitude
    elif attack.kind == AttackKind.RAMP:
        d[attack.mask] = attack.magnitude * (k - attack.start)
    return d
