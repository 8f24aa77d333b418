"""Reference trajectories from RRT* branches, flown leaf-to-root.

Each qualifying leaf's parent chain is reversed, smoothed with a natural
cubic spline in time, speed-limited, and given a yaw that keeps the camera
pointed at the goal object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import DT
from .planner import PlanTree
from .world import GoalRegion, SceneWorld, in_goal_region

_SPEED_MARGIN = 1e-4
_DENSE = 100  # dense speed-check resolution: dt / _DENSE


class TrajectoryError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrajConfig:
    dt: float = DT
    v_max: float = 1.5
    min_length: float = 1.0
    yaw_rate_max: float = 2.0
    approach_bias: bool = True
    max_trajectories: Optional[int] = None
    collision_check_step: Optional[float] = None  # default: bubble_radius / 4


@dataclass
class ReferenceTrajectory:
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    yaw: np.ndarray
    object_id: int = -1
    leaf: int = -1
    waypoints: Optional[np.ndarray] = field(default=None, repr=False)
    spline: Optional[CubicSpline] = field(default=None, repr=False)

    @property
    def duration(self) -> float:
        return float(self.t[-1])

    def __len__(self):
        return len(self.t)

    def sample(self, k: int) -> tuple:
        return self.p[k], self.v[k], self.a[k], float(self.yaw[k])


def extract_leaf_paths(tree: PlanTree, min_length: float = 1.0,
                       goal: Optional[GoalRegion] = None) -> list[tuple[int, np.ndarray]]:
    """(leaf id, waypoints) for every leaf whose root-path length >= min_length.

    Waypoints run leaf first, root last. With a goal region carrying an
    approach half-space, a path is kept only if it enters the goal sphere on
    the approach side.
    """
    out = []
    for leaf in tree.leaves():
        if leaf == 0 or tree.cost[leaf] < min_length:
            continue
        chain = tree.path_to_root(leaf)
        wps = tree.positions[chain].copy()
        if goal is not None and goal.approach_normal is not None:
            entry = _goal_entry_point(wps, goal)
            if entry is not None and float((entry - goal.center) @ goal.approach_normal) < 0.0:
                continue
        out.append((leaf, wps))
    return out


def _goal_entry_point(wps: np.ndarray, goal: GoalRegion) -> Optional[np.ndarray]:
    # First crossing of the goal sphere walking from the leaf toward the root.
    c, R = goal.center, goal.radius
    if np.linalg.norm(wps[0] - c) <= R:
        return wps[0]
    for a, b in zip(wps[:-1], wps[1:]):
        if np.linalg.norm(b - c) <= R:
            d = b - a
            f = a - c
            A, B, C = d @ d, 2 * f @ d, f @ f - R * R
            disc = max(B * B - 4 * A * C, 0.0)
            s = (-B - math.sqrt(disc)) / (2 * A)
            return a + min(max(s, 0.0), 1.0) * d
    return None


def _dedupe(waypoints) -> np.ndarray:
    wps = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    if len(wps) == 0:
        return wps
    keep = np.ones(len(wps), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(wps, axis=0), axis=1) > 0.0
    return wps[keep]


def _max_speed(spline: CubicSpline, duration: float, dt: float) -> float:
    n = max(2, int(math.ceil(duration / (dt / _DENSE))) + 1)
    ts = np.linspace(0.0, duration, n)
    return float(np.linalg.norm(spline(ts, 1), axis=1).max())


def smooth_cubic(waypoints, dt: float = DT, v_max: float = 1.5) -> ReferenceTrajectory:
    """Natural cubic spline through the waypoints, timed so speed <= v_max.

    Knot times start at arc length / (0.8 v_max) per segment; the whole
    schedule is stretched uniformly until the densely sampled speed fits,
    then once more so the duration is a whole number of dt steps.
    """
    if not v_max > 0:
        raise TrajectoryError("v_max must be positive")
    wps = _dedupe(waypoints)
    if len(wps) < 2:
        raise TrajectoryError("need at least two distinct waypoints")
    seg = np.linalg.norm(np.diff(wps, axis=0), axis=1)
    knots = np.concatenate([[0.0], np.cumsum(seg / (0.8 * v_max))])

    spline = CubicSpline(knots, wps, bc_type="natural")
    vmax_seen = _max_speed(spline, knots[-1], dt)
    target = v_max * (1.0 - _SPEED_MARGIN)
    scale = max(1.0, vmax_seen / target)
    steps = int(math.ceil(knots[-1] * scale / dt - 1e-9))
    knots = knots * (steps * dt / knots[-1])
    spline = CubicSpline(knots, wps, bc_type="natural")

    t = np.arange(steps + 1) * dt
    t[-1] = knots[-1]
    p = spline(t)
    p[0], p[-1] = wps[0], wps[-1]
    return ReferenceTrajectory(t=t, p=p, v=spline(t, 1), a=spline(t, 2),
                               yaw=np.zeros(len(t)), waypoints=wps, spline=spline)


def yaw_toward(p, q_o, previous: Optional[float] = None) -> float:
    """Heading that points the body x-axis (camera normal) at q_o.

    Directly above/below q_o the heading is undefined; `previous` is held
    (0.0 if none).
    """
    dx = float(q_o[0] - p[0])
    dy = float(q_o[1] - p[1])
    if math.hypot(dx, dy) <= 1e-6:
        return 0.0 if previous is None else previous
    return math.atan2(dy, dx)


def yaw_profile(positions: np.ndarray, q_o, dt: float, yaw_rate_max: float) -> np.ndarray:
    """Unwrapped, rate-limited yaw toward q_o along a sampled path."""
    raw = np.empty(len(positions))
    prev = None
    for k, p in enumerate(positions):
        prev = yaw_toward(p, q_o, prev)
        raw[k] = prev
    raw = np.unwrap(raw)
    out = raw.copy()
    limit = 0.999 * yaw_rate_max * dt
    for k in range(1, len(out)):
        out[k] = out[k - 1] + min(max(raw[k] - out[k - 1], -limit), limit)
    return out


def spline_collision_free(traj: ReferenceTrajectory, world: SceneWorld, step: Optional[float] = None) -> bool:
    """Dense check of the spline itself (not the polyline)."""
    step = world.bubble_radius / 4 if step is None else step
    if traj.spline is None:
        pts = traj.p
    else:
        speed = 1.05 * float(np.linalg.norm(traj.v, axis=1).max()) + 1e-9
        n = int(math.ceil(traj.duration * speed / step)) + 1
        ts = np.linspace(0.0, traj.duration, max(n, 2))
        pts = np.vstack([traj.spline(ts), traj.p])
    return bool(world.points_free(pts).all())


@dataclass
class GenerationReport:
    candidates: int = 0
    discarded_collision: int = 0
    discarded_approach: int = 0
    emitted: int = 0


def generate_references(tree: PlanTree, world: SceneWorld, config: TrajConfig = TrajConfig(),
                        rng: Optional[np.random.Generator] = None,
                        report: Optional[GenerationReport] = None) -> list[ReferenceTrajectory]:
    """Leaf paths -> smoothed, speed-limited, yaw-aligned references.

    Candidates are visited in leaf-id order, or in a seeded random order when
    `rng` is given; generation stops after `config.max_trajectories`.
    """
    report = report if report is not None else GenerationReport()
    obj = world.object_by_id(tree.object_id) if tree.object_id >= 0 else None
    q_o = obj.centroid if obj is not None else tree.root_position
    goal = world.goal_region(obj, config.approach_bias) if obj is not None else \
        GoalRegion(tree.root_position, world.goal_region_radius)

    all_paths = extract_leaf_paths(tree, config.min_length)
    kept = extract_leaf_paths(tree, config.min_length, goal)
    report.discarded_approach += len(all_paths) - len(kept)
    if rng is not None and kept:
        kept = [kept[i] for i in rng.permutation(len(kept))]

    out = []
    for leaf, wps in kept:
        if config.max_trajectories is not None and len(out) >= config.max_trajectories:
            break
        report.candidates += 1
        traj = smooth_cubic(wps, config.dt, config.v_max)
        if not spline_collision_free(traj, world, config.collision_check_step):
            report.discarded_collision += 1
            continue
        traj.yaw = yaw_profile(traj.p, q_o, config.dt, config.yaw_rate_max)
        traj.object_id = tree.object_id
        traj.leaf = leaf
        if not in_goal_region(traj.p[-1], goal):
            report.discarded_approach += 1
            continue
        out.append(traj)
    report.emitted += len(out)
    if not out:
        raise TrajectoryError("no feasible trajectory")
    return out
