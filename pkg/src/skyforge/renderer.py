"""Ego-view semantic heatmaps from the labeled point cloud.

Stand-in for an open-vocabulary segmentation network: each object carries a
fixed embedding and a pixel's score is the cosine similarity between the
query and the nearest point splatted into it. Scores are divided by the
highest score seen so far in the flight, then colormapped.

Camera frame: optical axis = body x, image right = body y, image down =
body z (with z_W pointing down, a level camera sees the horizon at row cy).
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import DroneState, quat_to_rotation
from .world import SceneWorld

BACKGROUND_FLOOR = 0.15
NEAR_PLANE = 0.05

_clamped_scores = 0


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class CameraModel:
    width: int = 42
    height: int = 24
    fx: float = 21.0  # 90 deg horizontal field of view
    fy: float = 21.0
    cx: float = 21.0
    cy: float = 12.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise RenderError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise RenderError("principal point must lie inside the image")


@dataclass
class HeatmapImage:
    scores: np.ndarray  # (height, width) in [0, 1]
    rgb: np.ndarray  # (height, width, 3) in [0, 1]

    def rgb_u8(self) -> np.ndarray:
        return np.round(self.rgb * 255.0).astype(np.uint8)


def _load_lut() -> np.ndarray:
    text = resources.files("skyforge").joinpath("data/heatmap_lut.csv").read_text()
    rows = [line.split(",") for line in text.splitlines() if line and not line.startswith("#")]
    lut = np.array([[int(r), int(g), int(b)] for _, r, g, b in rows], dtype=np.uint8)
    if lut.shape != (256, 3):
        raise RenderError("heatmap lookup table must have 256 rows")
    return lut


LUT = _load_lut()
_LUT_INDEX = {tuple(row): i for i, row in enumerate(LUT.tolist())}


def score_bins(scores: np.ndarray) -> np.ndarray:
    global _clamped_scores
    s = np.asarray(scores, dtype=float)
    out_of_range = (s < 0.0) | (s > 1.0) | ~np.isfinite(s)
    if out_of_range.any():
        _clamped_scores += int(out_of_range.sum())
        s = np.clip(np.nan_to_num(s, nan=0.0), 0.0, 1.0)
    return np.rint(s * 255.0).astype(np.intp)


def clamped_score_count() -> int:
    return _clamped_scores


def colormap(scores) -> np.ndarray:
    """Blue -> green -> yellow -> red lookup; returns floats in [0, 1]."""
    return LUT[score_bins(scores)].astype(float) / 255.0


def inverse_colormap(rgb) -> np.ndarray:
    """Score bin index for each rgb pixel (u8 or [0, 1] floats)."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        rgb = np.round(rgb * 255.0).astype(np.uint8)
    flat = rgb.reshape(-1, 3)
    idx = np.array([_LUT_INDEX[tuple(p)] for p in flat.tolist()], dtype=np.intp)
    return idx.reshape(rgb.shape[:-1])


def world_to_camera(points: np.ndarray, state: DroneState) -> np.ndarray:
    R = quat_to_rotation(state.q_BW)
    return (np.atleast_2d(points) - state.p_W) @ R


def project_points(points: np.ndarray, state: DroneState, camera: CameraModel):
    """Vectorized pinhole projection. Returns (u, v, depth, visible mask)."""
    pc = world_to_camera(points, state)
    depth = pc[:, 0]
    ahead = depth > NEAR_PLANE
    safe = np.where(ahead, depth, 1.0)
    u = camera.cx + camera.fx * pc[:, 1] / safe
    v = camera.cy + camera.fy * pc[:, 2] / safe
    return u, v, depth, ahead


def project_point(p_world, state: DroneState, camera: CameraModel = CameraModel()) -> Optional[tuple]:
    """(u, v, depth) in pixel units, or None behind the near plane."""
    u, v, depth, ahead = project_points(np.asarray(p_world, dtype=float)[None], state, camera)
    if not ahead[0]:
        return None
    return float(u[0]), float(v[0]), float(depth[0])


def unproject(u: float, v: float, depth: float, state: DroneState, camera: CameraModel = CameraModel()) -> np.ndarray:
    pc = np.array([depth, (u - camera.cx) * depth / camera.fx, (v - camera.cy) * depth / camera.fy])
    return state.p_W + quat_to_rotation(state.q_BW) @ pc


def raw_similarity(query_embedding, object_embedding) -> float:
    q = np.asarray(query_embedding, dtype=float)
    o = np.asarray(object_embedding, dtype=float)
    for e in (q, o):
        if abs(float(np.linalg.norm(e)) - 1.0) > 1e-6:
            raise RenderError("embeddings must have unit norm")
    return min(max(float(q @ o), -1.0), 1.0)


def point_scores(world: SceneWorld, query_embedding, floor: float = BACKGROUND_FLOOR) -> np.ndarray:
    """Raw similarity per scene point; unlabeled clutter gets `floor`."""
    scores = np.full(len(world.points), float(floor))
    for obj in world.objects:
        scores[world.labels == obj.object_id] = raw_similarity(query_embedding, obj.embedding)
    return scores


def splat(world: SceneWorld, scores: np.ndarray, state: DroneState, camera: CameraModel,
          floor: float = BACKGROUND_FLOOR) -> tuple[np.ndarray, Optional[float]]:
    """Z-buffered raw score grid, plus the highest visible point score
    (None when no point lands in the image)."""
    grid = np.full((camera.height, camera.width), float(floor))
    if len(world.points) == 0:
        return grid, None
    u, v, depth, ahead = project_points(world.points, state, camera)
    col = np.floor(u[ahead]).astype(np.int64)
    row = np.floor(v[ahead]).astype(np.int64)
    inside = (col >= 0) & (col < camera.width) & (row >= 0) & (row < camera.height)
    if not inside.any():
        return grid, None
    pix = (row * camera.width + col)[inside]
    d = depth[ahead][inside]
    s = scores[ahead][inside]
    order = np.lexsort((d, pix))  # per pixel, nearest first
    pix, s = pix[order], s[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    grid.ravel()[pix[first]] = s[first]
    return grid, float(s[first].max())


def render_heatmap(state: DroneState, world: SceneWorld, query_embedding, camera: CameraModel = CameraModel(),
                   memory: Optional[float] = None, floor: float = BACKGROUND_FLOOR,
                   scores: Optional[np.ndarray] = None) -> tuple[HeatmapImage, Optional[float]]:
    """Render one frame and return it with the updated running maximum.

    `memory` is the highest raw point score seen earlier in the flight (None
    at flight start). Frames are normalized by the running maximum; until any
    point has been seen the normalizer is 1.
    """
    if scores is None:
        scores = point_scores(world, query_embedding, floor)
    grid, frame_max = splat(world, scores, state, camera, floor)
    if frame_max is not None:
        memory = frame_max if memory is None else max(memory, frame_max)
    normalizer = memory if memory is not None and memory > 0 else 1.0
    norm = np.clip(grid / normalizer, 0.0, 1.0)
    return HeatmapImage(norm, colormap(norm)), memory


class HeatmapRenderer:
    """Per-flight renderer; the running maximum lives here."""

    def __init__(self, world: SceneWorld, query_embedding, camera: CameraModel = CameraModel(),
                 floor: float = BACKGROUND_FLOOR):
        self.world = world
        self.camera = camera
        self.floor = floor
        self.query = np.asarray(query_embedding, dtype=float)
        self.scores = point_scores(world, self.query, floor)
        self.memory: Optional[float] = None

    def reset(self):
        self.memory = None

    def __call__(self, state: DroneState) -> HeatmapImage:
        img, self.memory = render_heatmap(state, self.world, self.query, self.camera, self.memory,
                                          self.floor, self.scores)
        return img


def write_ppm(image: HeatmapImage, path) -> None:
    """Binary PPM (P6): ASCII header "P6\\n<width> <height>\\n255\\n", then
    height rows of width RGB byte triples, top row first."""
    rgb = image.rgb_u8()
    h, w, _ = rgb.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise RenderError("not a binary PPM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
