"""Plant models: discrete-time dynamics, measurement maps, analytic Jacobians.

Two models ship:

* ``ModelI`` — 6-state linear double integrator (position, velocity), input is
  a commanded acceleration. The workhorse for filter/detector unit analysis.
* ``ModelII`` — 12-state rigid-body quadrotor (position, velocity, ZYX Euler
  attitude, body rates), input is collective thrust plus three body torques,
  Euler-discretized at dt.

Both measure position through two abstract sensors (a "gps" triplet and a
"camera" triplet); ModelII adds a heading channel. Attack injection only ever
targets gps channels; the camera/heading channels exist so the filter retains
an honest reference when gps is compromised.

State conventions for ModelII: x = [px py pz vx vy vz phi theta psi p q r],
world frame Z-up, attitude as ZYX (yaw-pitch-roll) Euler angles wrapped to
(-pi, pi], thrust along the body z axis.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from fdibench.errors import ContractViolation, InvalidStateError

TWO_PI = 2.0 * np.pi


class ChannelKind(str, enum.Enum):
    GPS_POS = "gps_pos"
    CAMERA_POS = "camera_pos"
    MAG_HEADING = "mag_heading"


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    return -((-np.asarray(a) + np.pi) % TWO_PI - np.pi)


def _require_finite(name: str, v: np.ndarray) -> None:
    if not np.all(np.isfinite(v)):
        raise InvalidStateError(f"{name} contains non-finite entries")


def _require_shape(name: str, v: np.ndarray, dim: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (dim,):
        raise ContractViolation(f"{name} must have shape ({dim},), got {v.shape}")
    return v


class PlantModel:
    """Interface shared by the shipped models (and by test plants).

    Subclasses define n (state dim), input_dim, channel layout, plus f/g and
    their Jacobians. `f` already includes the dt discretization; process noise
    is added by `step_dynamics`, not here.
    """

    name: str = "plant"
    n: int = 0
    input_dim: int = 0
    channel_kinds: tuple = ()
    channel_names: tuple = ()

    @property
    def m(self) -> int:
        return len(self.channel_kinds)

    def channels_of(self, kind: ChannelKind) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.channel_kinds) if k == kind],
                        dtype=int)

    def maskable_channels(self) -> np.ndarray:
        """Channels that resilience logic may disable (gps only)."""
        return self.channels_of(ChannelKind.GPS_POS)

    def f(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jac_f(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def g(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jac_g(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def wrap_state(self, x: np.ndarray) -> np.ndarray:
        return x

    def wrap_innovation(self, r: np.ndarray) -> np.ndarray:
        return r

    def hover_input(self) -> np.ndarray:
        return np.zeros(self.input_dim)


def step_dynamics(model: PlantModel, x: np.ndarray, u: np.ndarray,
                  w: np.ndarray | float = 0.0) -> np.ndarray:
    """One step of x_{k+1} = f(x_k, u_k) + w_k with contract checks."""
    x = _require_shape("x", x, model.n)
    u = _require_shape("u", u, model.input_dim)
    _require_finite("x", x)
    _require_finite("u", u)
    w = np.zeros(model.n) if np.isscalar(w) and w == 0.0 else _require_shape("w", w, model.n)
    nxt = model.f(x, u) + w
    return model.wrap_state(nxt)


def measure(model: PlantModel, x: np.ndarray, v: np.ndarray | float = 0.0,
            d: np.ndarray | float = 0.0) -> np.ndarray:
    """y = g(x) + v + d. `d` is the (possibly zero) injected attack vector."""
    x = _require_shape("x", x, model.n)
    _require_finite("x", x)
    v = np.zeros(model.m) if np.isscalar(v) and v == 0.0 else _require_shape("v", v, model.m)
    d = np.zeros(model.m) if np.isscalar(d) and d == 0.0 else _require_shape("d", d, model.m)
    return model.g(x) + v + d


@dataclass
class ModelI(PlantModel):
    """Linear double integrator: p+ = p + v dt, v+ = v + u dt."""

    dt: float = 0.02

    name = "model1"
    n = 6
    input_dim = 3
    channel_kinds = (ChannelKind.GPS_POS,) * 3 + (ChannelKind.CAMERA_POS,) * 3
    channel_names = ("gps_x", "gps_y", "gps_z", "cam_x", "cam_y", "cam_z")

    def f(self, x, u):
        out = x.copy()
        out[0:3] += self.dt * x[3:6]
        out[3:6] += self.dt * u
        return out

    def jac_f(self, x, u):
        F = np.eye(6)
        F[0:3, 3:6] = self.dt * np.eye(3)
        return F

    def g(self, x):
        return np.concatenate([x[0:3], x[0:3]])

    def jac_g(self, x):
        H = np.zeros((6, 6))
        H[0:3, 0:3] = np.eye(3)
        H[3:6, 0:3] = np.eye(3)
        return H


@dataclass
class ModelII(PlantModel):
    """Euler-discretized rigid-body quadrotor with diagonal inertia."""

    dt: float = 0.02
    mass: float = 1.0
    gravity: float = 9.81
    inertia: tuple = (0.01, 0.01, 0.02)

    name = "model2"
    n = 12
    input_dim = 4
    channel_kinds = (ChannelKind.GPS_POS,) * 3 + (ChannelKind.CAMERA_POS,) * 3 + (
        ChannelKind.MAG_HEADING,)
    channel_names = ("gps_x", "gps_y", "gps_z", "cam_x", "cam_y", "cam_z", "mag_psi")

    def hover_input(self):
        return np.array([self.mass * self.gravity, 0.0, 0.0, 0.0])

    def _xdot(self, x, u):
        phi, theta, psi = x[6], x[7], x[8]
        p, q, r = x[9], x[10], x[11]
        thrust, tx, ty, tz = u
        jx, jy, jz = self.inertia

        cphi, sphi = np.cos(phi), np.sin(phi)
        cth, sth = np.cos(theta), np.sin(theta)
        cpsi, spsi = np.cos(psi), np.sin(psi)
        if abs(cth) < 1e-9:
            raise InvalidStateError("pitch at +/- pi/2: Euler kinematics singular")
        tth = sth / cth

        # body z axis in world coordinates (third column of Rz Ry Rx)
        bz = np.array([
            cpsi * sth * cphi + spsi * sphi,
            spsi * sth * cphi - cpsi * sphi,
            cth * cphi,
        ])

        xdot = np.zeros(12)
        xdot[0:3] = x[3:6]
        xdot[3:6] = (thrust / self.mass) * bz - np.array([0.0, 0.0, self.gravity])
        xdot[6] = p + (q * sphi + r * cphi) * tth
        xdot[7] = q * cphi - r * sphi
        xdot[8] = (q * sphi + r * cphi) / cth
        xdot[9] = ((jy - jz) * q * r + tx) / jx
        xdot[10] = ((jz - jx) * p * r + ty) / jy
        xdot[11] = ((jx - jy) * p * q + tz) / jz
        return xdot

    def f(self, x, u):
        return x + self.dt * self._xdot(x, u)

    def wrap_state(self, x):
        out = x.copy()
        out[6:9] = wrap_angle(out[6:9])
        return out

    def jac_f(self, x, u):
        phi, theta, psi = x[6], x[7], x[8]
        p, q, r = x[9], x[10], x[11]
        thrust = u[0]
        jx, jy, jz = self.inertia
        c = thrust / self.mass

        cphi, sphi = np.cos(phi), np.sin(phi)
        cth, sth = np.cos(theta), np.sin(theta)
        cpsi, spsi = np.cos(psi), np.sin(psi)
        tth = sth / cth

        A = np.zeros((12, 12))
        A[0:3, 3:6] = np.eye(3)

        # translational acceleration vs attitude: c * d(bz)/d(phi, theta, psi)
        A[3:6, 6] = c * np.array([
            -cpsi * sth * sphi + spsi * cphi,
            -spsi * sth * sphi - cpsi * cphi,
            -cth * sphi,
        ])
        A[3:6, 7] = c * np.array([cpsi * cth * cphi, spsi * cth * cphi, -sth * cphi])
        A[3:6, 8] = c * np.array([
            -spsi * sth * cphi + cpsi * sphi,
            cpsi * sth * cphi + spsi * sphi,
            0.0,
        ])

        # Euler-angle kinematics
        A[6, 6] = (q * cphi - r * sphi) * tth
        A[6, 7] = (q * sphi + r * cphi) / (cth * cth)
        A[6, 9] = 1.0
        A[6, 10] = sphi * tth
        A[6, 11] = cphi * tth

        A[7, 6] = -q * sphi - r * cphi
        A[7, 10] = cphi
        A[7, 11] = -sphi

        A[8, 6] = (q * cphi - r * sphi) / cth
        A[8, 7] = (q * sphi + r * cphi) * sth / (cth * cth)
        A[8, 10] = sphi / cth
        A[8, 11] = cphi / cth

        # body-rate dynamics (gyroscopic coupling, diagonal inertia)
        A[9, 10] = (jy - jz) * r / jx
        A[9, 11] = (jy - jz) * q / jx
        A[10, 9] = (jz - jx) * r / jy
        A[10, 11] = (jz - jx) * p / jy
        A[11, 9] = (jx - jy) * q / jz
        A[11, 10] = (jx - jy) * p / jz

        return np.eye(12) + self.dt * A

    def g(self, x):
        return np.concatenate([x[0:3], x[0:3], [x[8]]])

    def jac_g(self, x):
        H = np.zeros((7, 12))
        H[0:3, 0:3] = np.eye(3)
        H[3:6, 0:3] = np.eye(3)
        H[6, 8] = 1.0
        return H

    def wrap_innovation(self, r):
        out = np.asarray(r, dtype=float).copy()
        out[6] = wrap_angle(out[6])
        return out


def hover_state(model: PlantModel) -> np.ndarray:
    """The equilibrium state paired with model.hover_input()."""
    return np.zeros(model.n)


def make_model(model_id: str, dt: float = 0.02, **kw) -> PlantModel:
    if model_id == "model1":
        return ModelI(dt=dt)
    if model_id == "model2":
        return ModelII(dt=dt, **kw)
    raise ContractViolation(f"unknown model id {model_id!r}")
