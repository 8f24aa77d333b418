"""Procedural scenes for demos, tests and benchmarks.

Objects are hollow point shells with an open band at the centroid's
altitude, so the drone can reach the centroid in the planning plane while
the object still shows up as a compact blob in the camera.
"""

from __future__ import annotations

import numpy as np

from .world import SceneWorld, SemanticObject

DEFAULT_QUERIES = ("chair", "plant", "lamp", "backpack", "ladder", "monitor")
EMBEDDING_DIM = 16


def random_embeddings(n: int, dim: int, rng: np.random.Generator, max_cosine: float = 0.6) -> np.ndarray:
    """Unit embeddings whose pairwise cosine stays below `max_cosine`."""
    out = []
    while len(out) < n:
        e = rng.normal(size=dim)
        e /= np.linalg.norm(e)
        if all(abs(float(e @ o)) < max_cosine for o in out):
            out.append(e)
    return np.array(out)


def object_shell(centroid, rng: np.random.Generator, n: int = 60, radius: float = 0.5,
                 gap: float = 0.3) -> np.ndarray:
    """Points on a sphere around `centroid`, skipping |dz| < gap."""
    pts = []
    while len(pts) < n:
        d = rng.normal(size=3)
        d *= radius / np.linalg.norm(d)
        if abs(d[2]) >= gap:
            pts.append(centroid + d)
    return np.array(pts)


def make_scene(seed: int = 0, size: float = 20.0, height: float = 4.0, n_objects: int = 3,
               n_columns: int = 12, points_per_column: int = 40, n_clutter: int = 0,
               bubble_radius: float = 0.25, name: str = "", queries=DEFAULT_QUERIES) -> SceneWorld:
    """Square room [0, size]^2 x [-height, 0] (z down, floor at z = 0).

    Clutter is vertical columns ("furniture") plus optional loose points that
    stay clear of the flight plane band around each object's altitude.
    """
    rng = np.random.default_rng(seed)
    lo = np.array([0.0, 0.0, -height])
    hi = np.array([size, size, 0.0])
    flight_z = -1.5
    emb = random_embeddings(n_objects, EMBEDDING_DIM, rng)

    objects, pts, labels = [], [], []
    centroids = []
    while len(centroids) < n_objects:
        c = np.array([rng.uniform(2.5, size - 2.5), rng.uniform(2.5, size - 2.5),
                      flight_z + rng.uniform(-0.3, 0.3)])
        if all(np.linalg.norm(c[:2] - o[:2]) > 4.0 for o in centroids):
            centroids.append(c)
    for k, c in enumerate(centroids):
        shell = object_shell(c, rng)
        objects.append(SemanticObject(k, queries[k % len(queries)] if k < len(queries) else f"object{k}",
                                      shell.mean(axis=0), emb[k]))
        pts.append(shell)
        labels.append(np.full(len(shell), k))

    placed = 0
    while placed < n_columns:
        xy = rng.uniform(0.5, size - 0.5, size=2)
        if any(np.linalg.norm(xy - c[:2]) < 3.0 for c in centroids):
            continue
        z = np.linspace(-height, 0.0, points_per_column)
        col = np.column_stack([np.full_like(z, xy[0]), np.full_like(z, xy[1]), z])
        pts.append(col)
        labels.append(np.full(len(col), -1))
        placed += 1

    if n_clutter:
        loose = rng.uniform(lo, hi, size=(n_clutter, 3))
        keep = np.ones(n_clutter, dtype=bool)
        for c in centroids:
            keep &= np.linalg.norm(loose[:, :2] - c[:2], axis=1) > 3.0
        keep &= np.abs(loose[:, 2] - flight_z) > 0.9
        loose = loose[keep]
        pts.append(loose)
        labels.append(np.full(len(loose), -1))

    return SceneWorld(points=np.concatenate(pts), labels=np.concatenate(labels), objects=tuple(objects),
                      bounds_min=lo, bounds_max=hi, bubble_radius=bubble_radius,
                      name=name or f"scene{seed}")


def empty_scene(size: float = 20.0, altitude: float = 0.0, dim: int = EMBEDDING_DIM) -> SceneWorld:
    """Obstacle-free square with a single object at its center."""
    e = np.zeros(dim)
    e[0] = 1.0
    obj = SemanticObject(0, "target", [size / 2, size / 2, altitude], e)
    return SceneWorld(points=np.empty((0, 3)), labels=np.empty(0, dtype=np.int64), objects=(obj,),
                      bounds_min=[0.0, 0.0, altitude - 1.0], bounds_max=[size, size, altitude + 1.0],
                      name="empty")
