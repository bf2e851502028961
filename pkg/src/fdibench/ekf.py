"""Extended Kalman filter and whitened-residue generation.

The filter runs the standard predict/update cycle with analytic Jacobians and
a Joseph-form covariance update. Two things are slightly unusual and both are
load-bearing for the rest of the package:

* **Shadow residues.** The innovation r, its covariance S, and the whitened
  residue r~ = S^(-1/2) r are always computed over *all* channels, even ones
  excluded from the state update by a mask. A masked gps channel therefore
  keeps producing residues (against the camera-driven estimate), which is what
  lets detectors keep scoring it and resilience logic decide when to re-admit
  it.
* **Exact masked equality.** The state/covariance update is computed from the
  masked submatrices (H_a, R_aa, r_a), so with gps masked the update is
  *element-wise identical* to a filter built without gps channels at all.

Covariances are re-symmetrized after every step, so P == P.T holds bitwise.
Whitening uses a symmetric eigendecomposition with eigenvalues floored at
`eig_floor`; the update solve raises FilterNumericalError if the active
innovation block is singular at that floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fdibench.attacks import LABEL_CLEAN
from fdibench.dynamics import PlantModel
from fdibench.errors import ContractViolation, FilterNumericalError
from fdibench.noise import NoiseModel
from fdibench.simulate import RunRecord
from fdibench.storage import float_repr, read_csv, read_json, write_csv, write_json

EIG_FLOOR = 1e-12


def _sym(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2.0


def inv_sqrt_psd(s: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Symmetric S^(-1/2) via eigendecomposition, eigenvalues floored."""
    w, v = np.linalg.eigh(_sym(s))
    w = np.maximum(w, floor)
    return (v / np.sqrt(w)) @ v.T


@dataclass
class FilterConfig:
    p0_scale: float = 10.0
    warmup_steps: int = 20
    init_offset: np.ndarray | None = None
    eig_floor: float = EIG_FLOOR
    active_mask: np.ndarray | None = None  # static channel mask; None = all on


@dataclass
class EkfState:
    x: np.ndarray
    P: np.ndarray
    k: int = 0


@dataclass
class ResidueSample:
    k: int
    r: np.ndarray
    r_tilde: np.ndarray
    S: np.ndarray
    warmup: bool
    label: str


def ekf_predict(model: PlantModel, state: EkfState, u: np.ndarray,
                Q: np.ndarray) -> EkfState:
    F = model.jac_f(state.x, u)
    x = model.wrap_state(model.f(state.x, u))
    P = _sym(F @ state.P @ F.T + Q)
    return EkfState(x=x, P=P, k=state.k + 1)


def ekf_update(model: PlantModel, state: EkfState, y: np.ndarray,
               R: np.ndarray, active_mask: np.ndarray | None = None,
               eig_floor: float = EIG_FLOOR):
    """Measurement update; returns (posterior EkfState, r, r_tilde, S_full).

    r/r_tilde/S_full cover every channel; active_mask only restricts which
    rows feed the state update.
    """
    m = model.m
    y = np.asarray(y, dtype=float)
    if y.shape != (m,):
        raise ContractViolation(f"y must have shape ({m},), got {y.shape}")
    if active_mask is None:
        active_mask = np.ones(m, dtype=bool)
    active_mask = np.asarray(active_mask, dtype=bool)
    if active_mask.shape != (m,):
        raise ContractViolation("active_mask length must equal channel count")

    H = model.jac_g(state.x)
    r = model.wrap_innovation(y - model.g(state.x))
    S_full = _sym(H @ state.P @ H.T + R)
    r_tilde = inv_sqrt_psd(S_full, eig_floor) @ r

    if not active_mask.any():
        return EkfState(x=state.x.copy(), P=state.P.copy(), k=state.k), r, r_tilde, S_full

    idx = np.where(active_mask)[0]
    Ha = H[idx]
    Ra = R[np.ix_(idx, idx)]
    Sa = _sym(Ha @ state.P @ Ha.T + Ra)
    eigs = np.linalg.eigvalsh(Sa)
    if eigs.min() < eig_floor:
        names = getattr(model, "channel_names", tuple(str(i) for i in range(m)))
        block = [names[i] for i in idx]
        raise FilterNumericalError(
            f"innovation covariance singular (min eig {eigs.min():.3e}) on "
            f"active channel block {block}")
    K = np.linalg.solve(Sa, Ha @ state.P).T  # P H' S^-1
    x = model.wrap_state(state.x + K @ r[idx])
    ikh = np.eye(state.P.shape[0]) - K @ Ha
    P = _sym(ikh @ state.P @ ikh.T + K @ Ra @ K.T)
    return EkfState(x=x, P=P, k=state.k), r, r_tilde, S_full


@dataclass
class ResidueSequence:
    """Aligned residue stream for one run (arrays indexed by step k)."""

    model_id: str
    channel_names: tuple
    r: np.ndarray          # (T, m) raw innovations
    r_tilde: np.ndarray    # (T, m) whitened innovations
    warmup: np.ndarray     # (T,) bool
    labels: list           # (T,) strings
    estimates: np.ndarray  # (T, n) posterior state estimates
    meta: dict = field(default_factory=dict)

    @property
    def t_steps(self) -> int:
        return self.r.shape[0]

    @property
    def m(self) -> int:
        return self.r.shape[1]

    def sample(self, k: int, S: np.ndarray | None = None) -> ResidueSample:
        return ResidueSample(k=k, r=self.r[k], r_tilde=self.r_tilde[k],
                             S=S if S is not None else np.empty(0),
                             warmup=bool(self.warmup[k]), label=self.labels[k])

    def detector_input(self, whitened: bool = True) -> np.ndarray:
        return self.r_tilde if whitened else self.r

    def onset(self) -> int | None:
        for k, lab in enumerate(self.labels):
            if lab != LABEL_CLEAN:
                return k
        return None


def generate_residues(model: PlantModel, record: RunRecord, noise: NoiseModel,
                      config: FilterConfig | None = None) -> ResidueSequence:
    """Run the EKF over a recorded run and emit the residue stream.

    The filter is matched: it assumes the run's own Q and (family-equivalent)
    R. Estimates are posterior (after the step-k update).
    """
    config = config or FilterConfig()
    if record.model_id != model.name:
        raise ContractViolation(
            f"record was produced by {record.model_id!r}, filter model is "
            f"{model.name!r}")
    Q = noise.process_cov
    R = noise.meas_cov()
    if np.any(np.diag(R) <= 0):
        raise ContractViolation("measurement covariance must be positive definite")

    T = record.t_steps
    offset = (np.zeros(model.n) if config.init_offset is None
              else np.asarray(config.init_offset, dtype=float))
    if offset.shape != (model.n,):
        raise ContractViolation(f"init_offset must have shape ({model.n},)")
    state = EkfState(x=record.states[0] + offset,
                     P=config.p0_scale * np.eye(model.n), k=0)

    r_arr = np.zeros((T, model.m))
    rt_arr = np.zeros((T, model.m))
    est = np.zeros((T, model.n))
    warm = np.arange(T) < config.warmup_steps

    for k in range(T):
        state, r, r_tilde, _ = ekf_update(
            model, state, record.measurements[k], R,
            active_mask=config.active_mask, eig_floor=config.eig_floor)
        r_arr[k] = r
        rt_arr[k] = r_tilde
        est[k] = state.x
        if k + 1 < T:
            state = ekf_predict(model, state, record.inputs[k], Q)

    meta = {
        "format_version": 1,
        "kind": "residues",
        "model": model.name,
        "t_steps": T,
        "warmup_steps": int(config.warmup_steps),
        "p0_scale": float(config.p0_scale),
        "channel_names": list(model.channel_names),
        "source_run": dict(record.meta),
    }
    return ResidueSequence(model_id=model.name, channel_names=model.channel_names,
                           r=r_arr, r_tilde=rt_arr, warmup=warm,
                           labels=list(record.labels), estimates=est, meta=meta)


def save_residues(seq: ResidueSequence, csv_path: str | Path,
                  source_digest: str | None = None) -> dict:
    csv_path = Path(csv_path)
    header = (["k", "warmup"]
              + [f"rt_{name}" for name in seq.channel_names]
              + ["label"])
    rows = []
    for k in range(seq.t_steps):
        rows.append([str(k), "1" if seq.warmup[k] else "0"]
                    + [float_repr(v) for v in seq.r_tilde[k]]
                    + [seq.labels[k]])
    digest = write_csv(csv_path, header, rows)
    sidecar = dict(seq.meta)
    sidecar["csv_sha256"] = digest
    if source_digest is not None:
        sidecar["source_run_sha256"] = source_digest
    side = csv_path.with_suffix(".json")
    side_digest = write_json(side, sidecar)
    return {str(csv_path): digest, str(side): side_digest}


def load_residues(csv_path: str | Path) -> ResidueSequence:
    csv_path = Path(csv_path)
    meta = read_json(csv_path.with_suffix(".json"))
    header, rows = read_csv(csv_path)
    names = tuple(meta["channel_names"])
    m = len(names)
    rt = np.array([[float(v) for v in row[2:2 + m]] for row in rows])
    warm = np.array([row[1] == "1" for row in rows])
    labels = [row[-1] for row in rows]
    return ResidueSequence(model_id=meta["model"], channel_names=names,
                           r=np.full_like(rt, np.nan), r_tilde=rt, warmup=warm,
                           labels=labels, estimates=np.empty((len(rows), 0)),
                           meta=meta)
