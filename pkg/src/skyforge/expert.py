"""Closed-loop expert: flies reference trajectories under domain randomization.

The controller only knows the nominal drone parameters; the simulated plant
flies with parameters drawn within +-param_fraction of nominal, and the state
is kicked every `perturb_period` seconds. A cascaded position -> thrust
vector -> attitude law with an acceleration disturbance observer pulls the
drone back onto the reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynamics import (DT, ControlInput, DroneParams, DroneState, integrate_step, quat_from_yaw,
                       quat_multiply, quat_to_rotation, rotation_to_quat)
from .trajgen import ReferenceTrajectory

DIVERGENCE_LIMIT = 5.0


class ExpertError(ValueError):
    pass


@dataclass(frozen=True)
class RandomizationSpec:
    param_fraction: float = 0.30
    perturb_period: float = 2.0
    pos_sigma: float = 0.15
    vel_sigma: float = 0.15
    yaw_sigma: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.param_fraction < 1.0:
            raise ExpertError("param_fraction must lie in [0, 1)")
        if not self.perturb_period > 0:
            raise ExpertError("perturb_period must be positive")


@dataclass(frozen=True)
class TrackingGains:
    kp: float = 6.0
    kd: float = 4.5
    k_att: float = 8.0
    rate_limit: float = 6.0
    observer_gain: float = 0.35  # per control step, in (0, 1]
    disturbance_limit: float = 12.0


def randomize_params(nominal: DroneParams, spec: RandomizationSpec, rng: np.random.Generator) -> DroneParams:
    f = spec.param_fraction
    sm, sk = rng.uniform(1.0 - f, 1.0 + f, size=2)
    return DroneParams(m_dr=nominal.m_dr * sm, k_th=nominal.k_th * sk, g=nominal.g)


def perturb_state(x: DroneState, spec: RandomizationSpec, rng: np.random.Generator) -> DroneState:
    dp = rng.normal(0.0, 1.0, 3) * spec.pos_sigma
    dv = rng.normal(0.0, 1.0, 3) * spec.vel_sigma
    dyaw = rng.normal() * spec.yaw_sigma
    q = quat_multiply(quat_from_yaw(dyaw), x.q_BW)
    return DroneState(x.p_W + dp, x.v_W + dv, q / np.linalg.norm(q))


def desired_attitude(thrust_dir: np.ndarray, yaw: float) -> np.ndarray:
    """Rotation with body z along `thrust_dir` and body x heading `yaw`."""
    z_b = thrust_dir
    x_c = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    y_b = np.cross(z_b, x_c)
    n = np.linalg.norm(y_b)
    if n < 1e-6:  # thrust axis horizontal along the heading; pick any orthogonal
        y_b = np.cross(z_b, np.array([-math.sin(yaw), math.cos(yaw), 0.0]))
        n = np.linalg.norm(y_b)
    y_b /= n
    x_b = np.cross(y_b, z_b)
    return np.column_stack([x_b, y_b, z_b])


def track_step(x: DroneState, ref: tuple, believed: DroneParams, gains: TrackingGains = TrackingGains(),
               disturbance: Optional[np.ndarray] = None) -> ControlInput:
    """One control update toward reference sample `ref` = (p*, v*, a*, yaw*).

    `disturbance` is the estimated unmodelled acceleration (world frame);
    zero when omitted.
    """
    p_ref, v_ref, a_ref, yaw_ref = ref
    p_ref = np.asarray(p_ref, dtype=float)
    v_ref = np.asarray(v_ref, dtype=float)
    a_ref = np.asarray(a_ref, dtype=float)
    if not (np.all(np.isfinite(p_ref)) and np.all(np.isfinite(v_ref))
            and np.all(np.isfinite(a_ref)) and math.isfinite(yaw_ref)):
        raise ExpertError("non-finite reference sample")
    d_hat = np.zeros(3) if disturbance is None else disturbance

    a_des = a_ref + gains.kp * (p_ref - x.p_W) + gains.kd * (v_ref - x.v_W)
    # v_dot = g z_W - (k_th f / m) z_B + d  =>  (k_th f / m) z_B = g z_W + d - a_des
    force = np.array([0.0, 0.0, believed.g]) + d_hat - a_des
    R = quat_to_rotation(x.q_BW)
    z_b = R[:, 2]
    norm = np.linalg.norm(force)
    z_des = force / norm if norm > 1e-6 else z_b
    f_th = believed.m_dr * max(float(force @ z_b), 0.0) / believed.k_th
    f_th = min(max(f_th, 0.0), 1.0)

    q_des = rotation_to_quat(desired_attitude(z_des, yaw_ref))
    q_inv = x.q_BW * np.array([-1.0, -1.0, -1.0, 1.0])
    q_err = quat_multiply(q_inv, q_des)
    if q_err[3] < 0:
        q_err = -q_err
    omega = gains.k_att * 2.0 * q_err[:3]
    rate = np.linalg.norm(omega)
    if rate > gains.rate_limit:
        omega *= gains.rate_limit / rate
    return ControlInput(f_th, omega)


class TrackingController:
    """track_step plus a first-order disturbance observer.

    The observer compares the measured velocity change with what the
    believed model predicts for the last command and low-pass filters the
    difference.
    """

    def __init__(self, believed: DroneParams, gains: TrackingGains = TrackingGains(), dt: float = DT):
        self.believed = believed
        self.gains = gains
        self.dt = dt
        self.d_hat = np.zeros(3)
        self._last = None  # (state, input)

    def reset_observer_history(self):
        """Forget the last (state, input) pair, e.g. after a teleporting perturbation."""
        self._last = None

    def __call__(self, x: DroneState, ref: tuple) -> ControlInput:
        if self._last is not None:
            x0, u0 = self._last
            a_meas = (x.v_W - x0.v_W) / self.dt
            z0 = quat_to_rotation(x0.q_BW)[:, 2]
            z1 = quat_to_rotation(x.q_BW)[:, 2]
            z_mid = z0 + z1
            z_mid /= np.linalg.norm(z_mid)
            b = self.believed
            a_model = np.array([0.0, 0.0, b.g]) - b.k_th * u0.f_th / b.m_dr * z_mid
            L = self.gains.observer_gain
            self.d_hat = (1 - L) * self.d_hat + L * (a_meas - a_model)
            n = np.linalg.norm(self.d_hat)
            if n > self.gains.disturbance_limit:
                self.d_hat *= self.gains.disturbance_limit / n
        u = track_step(x, ref, self.believed, self.gains, self.d_hat)
        self._last = (x, u)
        return u


@dataclass
class Rollout:
    states: list
    inputs: list
    images: list
    times: np.ndarray
    params_used: DroneParams
    reference_id: int = -1
    failed: bool = False
    perturbation_steps: list = field(default_factory=list)
    max_error: float = 0.0

    def __len__(self):
        return len(self.states)

    def state_array(self) -> np.ndarray:
        return np.array([s.as_vector() for s in self.states])

    def input_array(self) -> np.ndarray:
        return np.array([u.as_vector() for u in self.inputs])


def fly_reference(ref: ReferenceTrajectory, nominal: DroneParams, spec: RandomizationSpec,
                  rng: np.random.Generator, render: Optional[Callable[[DroneState], object]] = None,
                  gains: TrackingGains = TrackingGains(), dt: float = DT, reference_id: int = -1,
                  true_params: Optional[DroneParams] = None) -> Rollout:
    """Fly `ref` with randomized plant parameters, logging every dt.

    The rollout has round(duration / dt) + 1 samples; `render(state)` (when
    given) produces the image logged with each sample. A position error above
    DIVERGENCE_LIMIT stops the flight and marks it failed.
    """
    params = true_params if true_params is not None else randomize_params(nominal, spec, rng)
    ctrl = TrackingController(nominal, gains, dt)
    n_steps = int(round(ref.duration / dt))
    period = max(1, int(round(spec.perturb_period / dt)))

    p0, v0, _, yaw0 = ref.sample(0)
    x = DroneState(p0, v0, quat_from_yaw(yaw0))
    states, inputs, images, perturbed = [], [], [], []
    failed = False
    max_err = 0.0
    for k in range(n_steps + 1):
        sample = ref.sample(k)
        err = float(np.linalg.norm(x.p_W - sample[0]))
        max_err = max(max_err, err)
        if err > DIVERGENCE_LIMIT or not np.all(np.isfinite(x.as_vector())):
            failed = True
            break
        u = ctrl(x, sample)
        states.append(x)
        inputs.append(u)
        if render is not None:
            images.append(render(x))
        if k == n_steps:
            break
        x = integrate_step(x, u, params, dt)
        if (k + 1) % period == 0 and k + 1 < n_steps:
            x = perturb_state(x, spec, rng)
            ctrl.reset_observer_history()
            perturbed.append(k + 1)
    times = np.arange(len(states)) * dt
    return Rollout(states, inputs, images, times, params, reference_id, failed, perturbed, max_err)


def random_unit(rng: np.random.Generator) -> np.ndarray:
    d = rng.normal(size=3)
    return d / np.linalg.norm(d)


def funnel_trial(ref: ReferenceTrajectory, nominal: DroneParams, true_params: DroneParams,
                 kick: Callable[[DroneState], DroneState], warmup_steps: int = 60, horizon_steps: int = 40,
                 gains: TrackingGains = TrackingGains(), dt: float = DT) -> tuple[float, float]:
    """Track `ref`, apply `kick` to the state after `warmup_steps`, keep tracking.

    Returns the position error right after the kick and `horizon_steps`
    later.
    """
    if warmup_steps + horizon_steps >= len(ref):
        raise ExpertError("reference too short for the requested trial")
    ctrl = TrackingController(nominal, gains, dt)
    p0, v0, _, yaw0 = ref.sample(0)
    x = DroneState(p0, v0, quat_from_yaw(yaw0))
    for k in range(warmup_steps):
        x = integrate_step(x, ctrl(x, ref.sample(k)), true_params, dt)
    x = kick(x)
    ctrl.reset_observer_history()
    e0 = float(np.linalg.norm(x.p_W - ref.sample(warmup_steps)[0]))
    for k in range(warmup_steps, warmup_steps + horizon_steps):
        x = integrate_step(x, ctrl(x, ref.sample(k)), true_params, dt)
    e1 = float(np.linalg.norm(x.p_W - ref.sample(warmup_steps + horizon_steps)[0]))
    return e0, e1
