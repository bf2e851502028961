"""Closed-loop simulation producing labeled run records.

The controller acts on the *true* state (sensor attacks corrupt the estimator,
never the vehicle), so a run is: PD command -> plant step with process noise
-> measurement with noise plus injection, for t_steps steps. Rows are indexed
k = 0..T-1 with x_0 the initial state and y_k measured at x_k.

Noise draw order inside one step is fixed (measurement v first, process w
second) and a run's JSON sidecar records the RNG algorithm, so the byte
stream is reproducible from the seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import fdibench.version as version
from fdibench.attacks import AttackModel, LABEL_CLEAN, generate_attack
from fdibench.dynamics import ModelII, PlantModel, make_model, measure, step_dynamics
from fdibench.errors import ContractViolation, DivergenceError
from fdibench.noise import NoiseFamily, NoiseModel, sample_noise, sample_process_noise
from fdibench.storage import float_repr, read_csv, read_json, write_csv, write_json


@dataclass
class WaypointController:
    """Hover/waypoint PD controller (outer position loop, inner attitude loop).

    waypoints are world positions; the target switches every `switch_every`
    steps (None = hold the first forever). Gains default to a gently damped
    outer loop and a stiff inner loop; the tilt command is clamped so the
    quadrotor never approaches the Euler singularity.
    """

    waypoints: tuple = ((0.0, 0.0, 1.0),)
    switch_every: int | None = None
    kp: float = 1.0
    kd: float = 1.4
    kp_att: float = 20.0
    kd_att: float = 8.0
    tilt_limit: float = 0.3
    accel_limit: float = 10.0

    def target(self, k: int) -> np.ndarray:
        wps = self.waypoints
        if self.switch_every is None:
            return np.asarray(wps[0], dtype=float)
        idx = min(k // int(self.switch_every), len(wps) - 1)
        return np.asarray(wps[idx], dtype=float)

    def command(self, model: PlantModel, x: np.ndarray, k: int) -> np.ndarray:
        ref = self.target(k)
        pos, vel = x[0:3], x[3:6]
        a_des = self.kp * (ref - pos) - self.kd * vel
        a_des = np.clip(a_des, -self.accel_limit, self.accel_limit)
        if not isinstance(model, ModelII):
            return a_des

        g = model.gravity
        psi = x[8]
        # desired tilt from desired horizontal acceleration (small-angle map)
        phi_des = (a_des[0] * np.sin(psi) - a_des[1] * np.cos(psi)) / g
        theta_des = (a_des[0] * np.cos(psi) + a_des[1] * np.sin(psi)) / g
        phi_des = float(np.clip(phi_des, -self.tilt_limit, self.tilt_limit))
        theta_des = float(np.clip(theta_des, -self.tilt_limit, self.tilt_limit))

        thrust = model.mass * max(g + a_des[2], 0.0)
        jx, jy, jz = model.inertia
        tau_x = jx * (self.kp_att * (phi_des - x[6]) - self.kd_att * x[9])
        tau_y = jy * (self.kp_att * (theta_des - x[7]) - self.kd_att * x[10])
        tau_z = jz * (self.kp_att * (0.0 - x[8]) - self.kd_att * x[11])
        return np.array([thrust, tau_x, tau_y, tau_z])


@dataclass
class Scenario:
    model: PlantModel
    noise: NoiseModel
    attack: AttackModel
    controller: WaypointController = field(default_factory=WaypointController)
    t_steps: int = 3000
    seed: int = 0
    x0: np.ndarray | None = None
    divergence_bound: float = 1e6
    name: str = "scenario"


@dataclass
class RunRecord:
    """Everything one simulation produced, aligned on step index k."""

    model_id: str
    dt: float
    seed: int
    states: np.ndarray        # (T, n) truth
    inputs: np.ndarray        # (T, input_dim)
    measurements: np.ndarray  # (T, m)
    labels: list              # (T,) strings: "clean" / attack id
    channel_names: tuple
    meta: dict = field(default_factory=dict)

    @property
    def t_steps(self) -> int:
        return self.states.shape[0]

    def onset(self) -> int | None:
        for k, lab in enumerate(self.labels):
            if lab != LABEL_CLEAN:
                return k
        return None


def simulate_run(scenario: Scenario) -> RunRecord:
    """Run the closed loop; raises DivergenceError past the state-norm bound."""
    model = scenario.model
    attack = scenario.attack
    attack.validate_for(model)
    if scenario.t_steps <= 0:
        raise ContractViolation(f"t_steps must be positive, got {scenario.t_steps}")

    rng = np.random.Generator(np.random.Philox(scenario.seed))
    x = (np.zeros(model.n) if scenario.x0 is None
         else np.asarray(scenario.x0, dtype=float).copy())
    if x.shape != (model.n,):
        raise ContractViolation(f"x0 must have shape ({model.n},), got {x.shape}")

    T = scenario.t_steps
    states = np.zeros((T, model.n))
    inputs = np.zeros((T, model.input_dim))
    meas = np.zeros((T, model.m))
    labels = []

    for k in range(T):
        states[k] = x
        v = sample_noise(scenario.noise, rng, model.m)
        d = generate_attack(attack, k, model.m)
        meas[k] = measure(model, x, v, d)
        labels.append(attack.label_at(k))
        u = scenario.controller.command(model, x, k)
        inputs[k] = u
        w = sample_process_noise(scenario.noise, rng)
        x = step_dynamics(model, x, u, w)
        if np.linalg.norm(x) > scenario.divergence_bound:
            partial = RunRecord(
                model_id=model.name, dt=model.dt, seed=scenario.seed,
                states=states[: k + 1], inputs=inputs[: k + 1],
                measurements=meas[: k + 1], labels=labels,
                channel_names=model.channel_names,
                meta=_scenario_meta(scenario),
            )
            raise DivergenceError(
                f"state norm {np.linalg.norm(x):.3e} exceeded bound "
                f"{scenario.divergence_bound:.3e} at step {k}", partial=partial)

    return RunRecord(
        model_id=model.name, dt=model.dt, seed=scenario.seed,
        states=states, inputs=inputs, measurements=meas, labels=labels,
        channel_names=model.channel_names, meta=_scenario_meta(scenario),
    )


def _scenario_meta(s: Scenario) -> dict:
    model = s.model
    meta = {
        "format_version": 1,
        "kind": "run",
        "scenario_name": s.name,
        "model": model.name,
        "dt": model.dt,
        "t_steps": s.t_steps,
        "seed": s.seed,
        "rng": version.RNG_ALGORITHM,
        "numpy_version": np.__version__,
        "draw_order": "per step: measurement noise v, then process noise w",
        "noise": {
            "family": s.noise.family.value,
            "process_cov_diag": [float(q) for q in np.diag(s.noise.process_cov)],
            "meas_scale": [float(v) for v in s.noise.meas_scale],
            "zero_mean_exponential": s.noise.zero_mean_exponential,
        },
        "attack": {
            "kind": s.attack.kind.value,
            "mask": [bool(b) for b in s.attack.mask],
            "magnitude": float(s.attack.magnitude),
            "start": int(s.attack.start),
            "end": None if s.attack.end is None else int(s.attack.end),
        },
        "controller": {
            "waypoints": [list(map(float, w)) for w in s.controller.waypoints],
            "switch_every": s.controller.switch_every,
            "kp": s.controller.kp, "kd": s.controller.kd,
            "kp_att": s.controller.kp_att, "kd_att": s.controller.kd_att,
            "tilt_limit": s.controller.tilt_limit,
            "accel_limit": s.controller.accel_limit,
        },
        "channel_names": list(model.channel_names),
    }
    if isinstance(model, ModelII):
        meta["model_params"] = {
            "mass": model.mass, "gravity": model.gravity,
            "inertia": list(model.inertia),
        }
    return meta


def save_run(record: RunRecord, csv_path: str | Path) -> dict:
    """Write run CSV + JSON sidecar; returns {path: digest}."""
    csv_path = Path(csv_path)
    n = record.states.shape[1]
    nu = record.inputs.shape[1]
    m = record.measurements.shape[1]
    header = (["k"]
              + [f"x{i}" for i in range(n)]
              + [f"u{i}" for i in range(nu)]
              + [f"y_{name}" for name in record.channel_names]
              + ["label"])
    if len(record.channel_names) != m:
        raise ContractViolation("channel_names length != measurement dim")
    rows = []
    for k in range(record.t_steps):
        rows.append([str(k)]
                    + [float_repr(v) for v in record.states[k]]
                    + [float_repr(v) for v in record.inputs[k]]
                    + [float_repr(v) for v in record.measurements[k]]
                    + [record.labels[k]])
    csv_digest = write_csv(csv_path, header, rows)
    sidecar = dict(record.meta)
    sidecar["csv_sha256"] = csv_digest
    side_path = csv_path.with_suffix(".json")
    side_digest = write_json(side_path, sidecar)
    return {str(csv_path): csv_digest, str(side_path): side_digest}


def load_run(csv_path: str | Path) -> RunRecord:
    csv_path = Path(csv_path)
    meta = read_json(csv_path.with_suffix(".json"))
    header, rows = read_csv(csv_path)
    names = tuple(meta["channel_names"])
    n = sum(1 for h in header if h.startswith("x"))
    nu = sum(1 for h in header if h.startswith("u"))
    m = len(names)
    states = np.array([[float(v) for v in r[1:1 + n]] for r in rows])
    inputs = np.array([[float(v) for v in r[1 + n:1 + n + nu]] for r in rows])
    meas = np.array([[float(v) for v in r[1 + n + nu:1 + n + nu + m]] for r in rows])
    labels = [r[-1] for r in rows]
    return RunRecord(
        model_id=meta["model"], dt=float(meta["dt"]), seed=int(meta["seed"]),
        states=states, inputs=inputs, measurements=meas, labels=labels,
        channel_names=names, meta=meta,
    )
