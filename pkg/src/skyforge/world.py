"""Scene representation: labeled sparse point cloud, semantic objects and
collision / proximity queries.

World frame convention: gravity acts along +z (z points down), so a larger
z value is a *lower* altitude. Everything else in the package follows this.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

SCENE_VERSION = 1
DEFAULT_BUBBLE_RADIUS = 0.25
DEFAULT_GOAL_REGION_RADIUS = 2.0

# Relative slack used when asking the kd-tree for candidates; the final
# accept/reject decision is always recomputed with `_distances`.
_SLACK = 1e-9


class SceneError(ValueError):
    """Raised for malformed scenes or scene files."""


class ScenePoint(NamedTuple):
    position: tuple
    object_id: Optional[int] = None


@dataclass(frozen=True)
class SemanticObject:
    object_id: int
    name: str
    centroid: np.ndarray
    embedding: np.ndarray

    def __post_init__(self):
        centroid = np.asarray(self.centroid, dtype=float).reshape(3)
        emb = np.asarray(self.embedding, dtype=float).ravel()
        if not np.all(np.isfinite(centroid)):
            raise SceneError(f"object {self.name!r}: non-finite centroid")
        norm = float(np.linalg.norm(emb))
        if emb.size == 0 or abs(norm - 1.0) > 1e-6:
            raise SceneError(f"object {self.name!r}: embedding must be a unit vector (norm={norm:.6g})")
        object.__setattr__(self, "centroid", centroid)
        object.__setattr__(self, "embedding", emb)


def _distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    # The single distance formula every exact decision goes through.
    diff = points - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


class SpatialIndex:
    """Exact nearest-neighbour / radius queries over a fixed point set.

    Backed by a kd-tree; candidate sets are re-scored with the same
    arithmetic as :class:`LinearScanIndex` so both agree bit-for-bit.
    """

    def __init__(self, points):
        pts = np.ascontiguousarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("spatial index needs at least one point")
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self):
        return self.points.shape[0]

    def nearest(self, q):
        q = np.asarray(q, dtype=float)
        _, i = self._tree.query(q)
        i = int(i)
        return float(_distances(self.points[i : i + 1], q)[0]), i

    def within(self, q, radius: float) -> np.ndarray:
        """Sorted indices of points with distance <= radius."""
        q = np.asarray(q, dtype=float)
        cand = self._tree.query_ball_point(q, radius * (1 + _SLACK) + 1e-12)
        if not cand:
            return np.empty(0, dtype=np.intp)
        cand = np.sort(np.asarray(cand, dtype=np.intp))
        d = _distances(self.points[cand], q)
        return cand[d <= radius]

    def any_within(self, queries: np.ndarray, radius: float) -> np.ndarray:
        """Boolean mask: does any point lie within `radius` of each query row."""
        d, idx = self._tree.query(queries, distance_upper_bound=radius * (1 + _SLACK) + 1e-12)
        hit = d < math.inf
        if hit.any():
            rows = np.flatnonzero(hit)
            diff = self.points[idx[rows]] - queries[rows]
            hit[rows] = np.sqrt(np.einsum("ij,ij->i", diff, diff)) <= radius
        return hit

    def nearest_distances(self, queries: np.ndarray) -> np.ndarray:
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        _, idx = self._tree.query(queries)
        diff = self.points[idx] - queries
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))


class LinearScanIndex:
    """Exhaustive reference implementation with the SpatialIndex interface."""

    def __init__(self, points):
        pts = np.ascontiguousarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("spatial index needs at least one point")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]

    def nearest(self, q):
        d = _distances(self.points, np.asarray(q, dtype=float))
        i = int(np.argmin(d))
        return float(d[i]), i

    def within(self, q, radius: float) -> np.ndarray:
        d = _distances(self.points, np.asarray(q, dtype=float))
        return np.flatnonzero(d <= radius)

    def any_within(self, queries, radius: float) -> np.ndarray:
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        return np.array([bool(np.any(_distances(self.points, q) <= radius)) for q in queries])

    def nearest_distances(self, queries) -> np.ndarray:
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        return np.array([_distances(self.points, q).min() for q in queries])


def _as_point_array(points) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(points, np.ndarray):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return pts, np.full(len(pts), -1, dtype=np.int64)
    positions, labels = [], []
    for p in points:
        if isinstance(p, ScenePoint):
            positions.append(p.position)
            labels.append(-1 if p.object_id is None else int(p.object_id))
        else:
            positions.append(p)
            labels.append(-1)
    pts = np.asarray(positions, dtype=float).reshape(-1, 3)
    return pts, np.asarray(labels, dtype=np.int64)


def build_spatial_index(points) -> SpatialIndex:
    pts, _ = _as_point_array(points)
    if len(pts) == 0:
        raise ValueError("cannot build a spatial index over an empty point list")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point positions must be finite")
    return SpatialIndex(pts)


@dataclass(frozen=True)
class GoalRegion:
    center: np.ndarray
    radius: float = DEFAULT_GOAL_REGION_RADIUS
    # Unit normal of the approach half-space through `center`, or None.
    approach_normal: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("goal region radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        if self.approach_normal is not None:
            n = np.asarray(self.approach_normal, dtype=float).reshape(3)
            object.__setattr__(self, "approach_normal", n / np.linalg.norm(n))


def in_goal_region(p, g: GoalRegion) -> bool:
    d = np.asarray(p, dtype=float) - g.center
    if math.sqrt(float(d @ d)) > g.radius:
        return False
    if g.approach_normal is not None and float(d @ g.approach_normal) < 0.0:
        return False
    return True


@dataclass(frozen=True)
class SceneWorld:
    points: np.ndarray
    labels: np.ndarray
    objects: tuple
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    bubble_radius: float = DEFAULT_BUBBLE_RADIUS
    goal_region_radius: float = DEFAULT_GOAL_REGION_RADIUS
    name: str = "scene"
    index: SpatialIndex = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        lo = np.asarray(self.bounds_min, dtype=float).reshape(3)
        hi = np.asarray(self.bounds_max, dtype=float).reshape(3)
        if not np.all(hi > lo):
            raise SceneError("scene bounds must have positive extent on every axis")
        if not self.bubble_radius > 0:
            raise SceneError("bubble_radius must be positive")
        if not self.goal_region_radius > 0:
            raise SceneError("goal_region_radius must be positive")
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if len(labels) != len(pts):
            raise SceneError("labels and points differ in length")
        if not np.all(np.isfinite(pts)):
            raise SceneError("point positions must be finite")
        objects = tuple(self.objects)
        ids = {o.object_id for o in objects}
        if len(ids) != len(objects):
            raise SceneError("duplicate object ids")
        referenced = set(np.unique(labels[labels >= 0]).tolist())
        missing = referenced - ids
        if missing:
            raise SceneError(f"points reference unknown object ids {sorted(missing)}")
        for o in objects:
            if np.any(o.centroid < lo) or np.any(o.centroid > hi):
                raise SceneError(f"object {o.name!r} centroid lies outside the scene bounds")
        object.__setattr__(self, "bounds_min", lo)
        object.__setattr__(self, "bounds_max", hi)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "objects", objects)
        if self.index is None and len(pts):
            object.__setattr__(self, "index", SpatialIndex(pts))
        pts.setflags(write=False)
        labels.setflags(write=False)

    @classmethod
    def from_points(cls, points: Sequence[ScenePoint], objects, bounds, **kw) -> "SceneWorld":
        pts, labels = _as_point_array(points)
        lo, hi = bounds
        return cls(points=pts, labels=labels, objects=tuple(objects), bounds_min=lo, bounds_max=hi, **kw)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.bounds_min + self.bounds_max)

    def object_by_name(self, name: str) -> SemanticObject:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(name)

    def object_by_id(self, object_id: int) -> SemanticObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def in_bounds(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.all((p >= self.bounds_min) & (p <= self.bounds_max), axis=-1)

    def points_free(self, samples: np.ndarray) -> np.ndarray:
        """Per-row: inside bounds and strictly outside every bubble."""
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        ok = ((samples >= self.bounds_min) & (samples <= self.bounds_max)).all(axis=1)
        if self.index is not None and ok.any():
            ok[ok] = ~self.index.any_within(samples[ok], self.bubble_radius)
        return ok

    def clearance(self, p) -> float:
        """Distance from p to the nearest scene point (inf for an empty cloud)."""
        if self.index is None:
            return math.inf
        # kd-tree distance is accurate to an ulp; callers keep a margin.
        return float(self.index._tree.query(p)[0])

    def goal_region(self, obj: SemanticObject, approach_bias: bool = True) -> GoalRegion:
        normal = None
        if approach_bias:
            n = self.center - obj.centroid
            if np.linalg.norm(n) > 1e-9:
                normal = n
        return GoalRegion(obj.centroid, self.goal_region_radius, normal)


def min_obstacle_distance(p, world: SceneWorld) -> float:
    if world.index is None:
        return math.inf
    return world.index.nearest(np.asarray(p, dtype=float))[0]


def _segment_samples(a: np.ndarray, b: np.ndarray, step: float) -> np.ndarray:
    # Canonical orientation so that (a, b) and (b, a) give identical samples.
    if tuple(b) < tuple(a):
        a, b = b, a
    diff = b - a
    length = math.sqrt(float(diff @ diff))
    n = max(1, math.ceil(length / step))
    out = a + diff * (np.arange(n + 1) / n)[:, None]
    out[-1] = b
    return out


def segment_collision_free(a, b, world: SceneWorld, step: Optional[float] = None) -> bool:
    """True iff every sample along [a, b] (spacing <= step, endpoints included)
    is inside the bounds and farther than bubble_radius from every point."""
    step = world.bubble_radius / 2 if step is None else step
    if not step > 0:
        raise ValueError("step must be positive")
    samples = _segment_samples(np.asarray(a, dtype=float), np.asarray(b, dtype=float), step)
    if not ((samples >= world.bounds_min) & (samples <= world.bounds_max)).all():
        return False
    if world.index is None:
        return True
    return not world.index.any_within(samples, world.bubble_radius).any()


def segments_collision_free(a: np.ndarray, ends: np.ndarray, world: SceneWorld,
                            step: Optional[float] = None) -> np.ndarray:
    """Vectorized `segment_collision_free` for segments a -> ends[i]."""
    step = world.bubble_radius / 2 if step is None else step
    a = np.asarray(a, dtype=float)
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    if len(ends) == 0:
        return np.zeros(0, dtype=bool)
    chunks = [_segment_samples(a, e, step) for e in ends]
    sizes = np.array([len(c) for c in chunks])
    free = world.points_free(np.concatenate(chunks))
    bad = np.add.reduceat(~free, np.concatenate(([0], np.cumsum(sizes)[:-1])))
    return bad == 0


# -- scene files -----------------------------------------------------------

def scene_to_dict(world: SceneWorld) -> dict:
    pts = [[float(x), float(y), float(z), (None if lab < 0 else int(lab))]
           for (x, y, z), lab in zip(world.points.tolist(), world.labels.tolist())]
    return {
        "scene_version": SCENE_VERSION,
        "name": world.name,
        "bounds": {"min": world.bounds_min.tolist(), "max": world.bounds_max.tolist()},
        "bubble_radius": world.bubble_radius,
        "goal_region_radius": world.goal_region_radius,
        "objects": [
            {"id": o.object_id, "name": o.name, "centroid": o.centroid.tolist(),
             "embedding": o.embedding.tolist()}
            for o in world.objects
        ],
        "points": pts,
    }


def scene_from_dict(doc: dict) -> SceneWorld:
    if doc.get("scene_version") != SCENE_VERSION:
        raise SceneError(f"unsupported scene_version {doc.get('scene_version')!r}")
    try:
        objects = [SemanticObject(int(o["id"]), str(o["name"]), o["centroid"], o["embedding"])
                   for o in doc["objects"]]
        raw = doc["points"]
        pts = np.array([p[:3] for p in raw], dtype=float).reshape(-1, 3)
        labels = np.array([-1 if p[3] is None else int(p[3]) for p in raw], dtype=np.int64)
        return SceneWorld(
            points=pts, labels=labels, objects=tuple(objects),
            bounds_min=doc["bounds"]["min"], bounds_max=doc["bounds"]["max"],
            bubble_radius=float(doc.get("bubble_radius", DEFAULT_BUBBLE_RADIUS)),
            goal_region_radius=float(doc.get("goal_region_radius", DEFAULT_GOAL_REGION_RADIUS)),
            name=str(doc.get("name", "scene")),
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise SceneError(f"malformed scene document: {exc}") from exc


def load_scene(path) -> SceneWorld:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneError(f"cannot read scene {path}: {exc}") from exc
    world = scene_from_dict(doc)
    if "name" not in doc:
        world = SceneWorld(world.points, world.labels, world.objects, world.bounds_min,
                           world.bounds_max, world.bubble_radius, world.goal_region_radius,
                           name=path.stem, index=world.index)
    return world


def save_scene(world: SceneWorld, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(scene_to_dict(world)))
