"""Semi-kinematic quadrotor model driven by collective thrust and body rates.

State layout (10 floats): position p_W, velocity v_W, attitude quaternion
q_BW stored (x, y, z, w), Hamilton convention, rotating body vectors into
the world frame. Gravity points along +z_W; thrust pushes along -z_B, so at
identity attitude a hovering drone has body z aligned with gravity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DT = 0.05
SUBSTEPS = 4

_thrust_clamps = 0


class DynamicsError(ValueError):
    pass


@dataclass(frozen=True)
class DroneParams:
    m_dr: float = 0.87
    k_th: float = 2 * 0.87 * 9.81  # hover at f_th = 0.5
    g: float = 9.81

    def __post_init__(self):
        if not (self.m_dr > 0 and self.k_th > 0):
            raise DynamicsError("mass and thrust coefficient must be positive")

    @property
    def hover_thrust(self) -> float:
        return self.m_dr * self.g / self.k_th


@dataclass(frozen=True)
class ControlInput:
    f_th: float
    omega_B: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "f_th", float(self.f_th))
        object.__setattr__(self, "omega_B", np.asarray(self.omega_B, dtype=float).reshape(3))

    def as_vector(self) -> np.ndarray:
        return np.array([self.f_th, *self.omega_B])


@dataclass(frozen=True)
class DroneState:
    p_W: np.ndarray
    v_W: np.ndarray
    q_BW: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))

    def __post_init__(self):
        for name in ("p_W", "v_W"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        object.__setattr__(self, "q_BW", np.asarray(self.q_BW, dtype=float).reshape(4))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p_W, self.v_W, self.q_BW])

    @classmethod
    def from_vector(cls, x) -> "DroneState":
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6:10])

    @property
    def yaw(self) -> float:
        return yaw_of(self.q_BW)


# -- quaternion helpers (x, y, z, w) ---------------------------------------

def quat_multiply(a, b) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + bw * ax + ay * bz - az * by,
        aw * by + bw * ay + az * bx - ax * bz,
        aw * bz + bw * az + ax * by - ay * bx,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.array([0.0, 0.0, 0.0, 1.0])
    s = math.sin(angle / 2) / n
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, math.cos(angle / 2)])


def quat_from_yaw(yaw: float) -> np.ndarray:
    return np.array([0.0, 0.0, math.sin(yaw / 2), math.cos(yaw / 2)])


def quat_exp_body_rate(q0, omega, t: float) -> np.ndarray:
    """Closed-form attitude after rotating at constant body rate `omega` for `t`."""
    omega = np.asarray(omega, dtype=float)
    return quat_multiply(q0, quat_from_axis_angle(omega, float(np.linalg.norm(omega)) * t))


def quat_to_rotation(q) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    q = np.array(q)
    if q[3] < 0:
        q = -q
    return q / np.linalg.norm(q)


def yaw_of(q) -> float:
    """Heading of the body x-axis projected on the world XY plane."""
    x, y, z, w = q
    return math.atan2(2 * (x * y + w * z), 1 - 2 * (y * y + z * z))


def omega_matrix(omega) -> np.ndarray:
    """W(omega) such that q_dot = 0.5 * W(omega) @ q for body rates."""
    wx, wy, wz = omega
    return np.array([
        [0.0, wz, -wy, wx],
        [-wz, 0.0, wx, wy],
        [wy, -wx, 0.0, wz],
        [-wx, -wy, -wz, 0.0],
    ])


# -- equations of motion ---------------------------------------------------

def _deriv(s, acc, wx, wy, wz, g):
    # s: 10-tuple state; acc = k_th * f_th / m_dr
    x, y, z, w = s[6], s[7], s[8], s[9]
    return (
        s[3], s[4], s[5],
        -acc * 2.0 * (x * z + w * y),
        -acc * 2.0 * (y * z - w * x),
        g - acc * (1.0 - 2.0 * (x * x + y * y)),
        0.5 * (wz * y - wy * z + wx * w),
        0.5 * (-wz * x + wx * z + wy * w),
        0.5 * (wy * x - wx * y + wz * w),
        0.5 * (-wx * x - wy * y - wz * z),
    )


def _clamp_thrust(f: float) -> float:
    global _thrust_clamps
    if f < 0.0 or f > 1.0:
        _thrust_clamps += 1
        return min(max(f, 0.0), 1.0)
    return f


def thrust_clamp_count() -> int:
    """Number of times an out-of-range thrust was clamped in this process."""
    return _thrust_clamps


def state_derivative(x: DroneState, u: ControlInput, theta: DroneParams) -> np.ndarray:
    vec = x.as_vector()
    if not np.all(np.isfinite(vec)):
        raise DynamicsError("non-finite state")
    acc = theta.k_th * _clamp_thrust(u.f_th) / theta.m_dr
    wx, wy, wz = (float(c) for c in u.omega_B)
    return np.array(_deriv(tuple(vec.tolist()), acc, wx, wy, wz, theta.g))


def _integrate_vec(s: tuple, acc: float, w: tuple, g: float, dt: float, substeps: int) -> tuple:
    wx, wy, wz = w
    h = dt / substeps
    for _ in range(substeps):
        k1 = _deriv(s, acc, wx, wy, wz, g)
        k2 = _deriv(tuple(a + 0.5 * h * b for a, b in zip(s, k1)), acc, wx, wy, wz, g)
        k3 = _deriv(tuple(a + 0.5 * h * b for a, b in zip(s, k2)), acc, wx, wy, wz, g)
        k4 = _deriv(tuple(a + h * b for a, b in zip(s, k3)), acc, wx, wy, wz, g)
        s = tuple(a + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                  for a, b1, b2, b3, b4 in zip(s, k1, k2, k3, k4))
        n = math.sqrt(s[6] * s[6] + s[7] * s[7] + s[8] * s[8] + s[9] * s[9])
        s = s[:6] + (s[6] / n, s[7] / n, s[8] / n, s[9] / n)
    return s


def integrate_step(x: DroneState, u: ControlInput, theta: DroneParams, dt: float = DT,
                   substeps: int = SUBSTEPS) -> DroneState:
    """Advance one control period with classical RK4 (`substeps` sub-steps),
    renormalizing the quaternion after each sub-step."""
    if not dt > 0:
        raise DynamicsError("dt must be positive")
    vec = x.as_vector()
    if not np.all(np.isfinite(vec)):
        raise DynamicsError("non-finite state")
    acc = theta.k_th * _clamp_thrust(u.f_th) / theta.m_dr
    w = tuple(float(c) for c in u.omega_B)
    return DroneState.from_vector(_integrate_vec(tuple(vec.tolist()), acc, w, theta.g, dt, substeps))


def rollout(x0: DroneState, inputs: Sequence[ControlInput], theta: DroneParams,
            dt: float = DT) -> tuple[list[DroneState], list[ControlInput]]:
    inputs = list(inputs)
    if len(inputs) < 1:
        raise DynamicsError("rollout needs at least one input")
    X = [x0]
    for u in inputs:
        X.append(integrate_step(X[-1], u, theta, dt))
    return X, inputs


def hover_input(theta: DroneParams) -> ControlInput:
    return ControlInput(theta.hover_thrust, np.zeros(3))
