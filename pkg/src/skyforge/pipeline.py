"""End-to-end synthesis: plan -> references -> expert flights -> heatmaps -> chunks.

Every random stage draws from a seed derived from (master seed, scene id,
object id, trajectory index), and results are merged in that canonical
order, so the output bytes do not depend on the worker count.
"""

from __future__ import annotations

import json
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import DatasetManifest, chunk_rollout, shuffle_chunks, write_dataset
from .dynamics import DroneParams
from .expert import RandomizationSpec, fly_reference
from .planner import PlannerConfig, PlannerError, grow_tree
from .renderer import CameraModel, HeatmapRenderer
from .trajgen import GenerationReport, TrajConfig, TrajectoryError, generate_references
from .world import SceneWorld, load_scene

SEED_ENV = "SKYFORGE_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenes: list
    queries: list
    output: str = "out/dataset.skyf"
    master_seed: int = 0
    workers: int = 1
    trajectories_per_query: int = 5
    planner: PlannerConfig = field(default_factory=lambda: PlannerConfig(iterations=1500))
    randomization: RandomizationSpec = field(default_factory=RandomizationSpec)
    v_max: float = 1.5

    def validate(self):
        if not self.scenes:
            raise ConfigError("no scenes given")
        if not self.queries:
            raise ConfigError("query list is empty")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.trajectories_per_query < 1:
            raise ConfigError("trajectories_per_query must be >= 1")
        for s in self.scenes:
            if not Path(s).is_file():
                raise FileNotFoundError(f"scene file not found: {s}")


def _sub(cls, doc: dict, what: str):
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    return cls(**doc)


def config_from_dict(doc: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """RunConfig from a JSON document; relative scene paths resolve against base_dir."""
    doc = dict(doc)
    known = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        if "planner" in doc:
            doc["planner"] = _sub(PlannerConfig, doc["planner"], "planner")
        if "randomization" in doc:
            doc["randomization"] = _sub(RandomizationSpec, doc["randomization"], "randomization")
        cfg = RunConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if base_dir is not None:
        cfg.scenes = [str(s if Path(s).is_absolute() else base_dir / s) for s in cfg.scenes]
    return cfg


def apply_seed_env(cfg: RunConfig, environ=os.environ) -> RunConfig:
    raw = environ.get(SEED_ENV)
    if raw is None or raw == "":
        return cfg
    try:
        return replace(cfg, master_seed=int(raw))
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def scene_key(world: SceneWorld) -> int:
    return zlib.crc32(world.name.encode("utf-8"))


def task_seed(master: int, scene: int, object_id: int, *rest: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, scene, object_id, *rest])


# -- worker side -------------------------------------------------------------

_WORLDS: dict = {}


def _init_worker(scene_paths):
    _WORLDS.clear()
    for i, p in enumerate(scene_paths):
        _WORLDS[i] = load_scene(p)


@dataclass
class PairResult:
    scene_index: int
    query: str
    references: list
    report: GenerationReport
    error: str = ""


def _plan_pair(args) -> PairResult:
    scene_index, query, master, planner_cfg, v_max, n_traj = args
    world = _WORLDS[scene_index]
    obj = world.object_by_name(query)
    ss = task_seed(master, scene_key(world), obj.object_id)
    plan_seed, order_seed = ss.generate_state(2)
    report = GenerationReport()
    try:
        tree = grow_tree(world, obj, replace(planner_cfg, rng_seed=int(plan_seed)))
        refs = generate_references(tree, world, TrajConfig(v_max=v_max, max_trajectories=n_traj),
                                   rng=np.random.default_rng(order_seed), report=report)
    except (PlannerError, TrajectoryError) as exc:
        return PairResult(scene_index, query, [], report, str(exc))
    for r in refs:
        r.spline = None  # keep pickles small; flights only use the samples
    return PairResult(scene_index, query, refs, report)


@dataclass
class FlightResult:
    scene_index: int
    query: str
    traj_index: int
    failed: bool
    states: np.ndarray
    inputs: np.ndarray
    images: np.ndarray
    reference_duration: float

    def __len__(self):
        return len(self.states)

    def state_array(self):
        return self.states

    def input_array(self):
        return self.inputs


def _fly(args) -> FlightResult:
    scene_index, query, traj_index, ref, master, spec = args
    world = _WORLDS[scene_index]
    obj = world.object_by_name(query)
    rng = np.random.default_rng(task_seed(master, scene_key(world), obj.object_id, traj_index))
    render = HeatmapRenderer(world, obj.embedding, CameraModel())
    ro = fly_reference(ref, DroneParams(), spec, rng, render=render, reference_id=traj_index)
    images = np.stack([im.rgb_u8() for im in ro.images]) if ro.images else np.zeros((0, 0, 0, 3), np.uint8)
    return FlightResult(scene_index, query, traj_index, ro.failed, ro.state_array().reshape(-1, 10),
                        ro.input_array().reshape(-1, 4), images, ref.duration)


# -- driver ------------------------------------------------------------------

@dataclass
class SynthesisResult:
    manifest: DatasetManifest
    path: Path
    pair_errors: list


def _map(pool, fn, tasks):
    if pool is None:
        return [fn(t) for t in tasks]
    return list(pool.map(fn, tasks))


def synthesize(cfg: RunConfig, progress=None) -> SynthesisResult:
    """Run the whole pipeline and write the dataset; returns the manifest.

    Query names must resolve to an object in at least one scene; (scene,
    query) pairs where the scene lacks the object are skipped.
    """
    cfg.validate()
    worlds = [load_scene(p) for p in cfg.scenes]
    names = [w.name for w in worlds]
    if len(set(names)) != len(names):
        raise ConfigError(f"scene names must be unique: {names}")
    pairs = []
    for q in cfg.queries:
        hits = [i for i, w in enumerate(worlds) if any(o.name == q for o in w.objects)]
        if not hits:
            available = sorted({o.name for w in worlds for o in w.objects})
            raise KeyError(f"query {q!r} matches no object; available: {', '.join(available)}")
        pairs += [(i, q) for i in hits]
    pairs.sort(key=lambda p: (p[0], worlds[p[0]].object_by_name(p[1]).object_id))

    pool = None
    if cfg.workers > 1:
        pool = ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_worker, initargs=(cfg.scenes,))
    else:
        _WORLDS.clear()
        _WORLDS.update(enumerate(worlds))
    try:
        plans = _map(pool, _plan_pair, [(i, q, cfg.master_seed, cfg.planner, cfg.v_max,
                                         cfg.trajectories_per_query) for i, q in pairs])
        tasks = [(p.scene_index, p.query, k, ref, cfg.master_seed, cfg.randomization)
                 for p in plans for k, ref in enumerate(p.references)]
        if progress:
            progress(f"planned {len(pairs)} pairs, flying {len(tasks)} references")
        flights = _map(pool, _fly, tasks)
    finally:
        if pool is not None:
            pool.shutdown()

    manifest = DatasetManifest(master_seed=cfg.master_seed, scenes=names, queries=list(cfg.queries))
    manifest.discarded_trajectories = sum(p.report.discarded_collision + p.report.discarded_approach
                                          for p in plans)
    chunks = []
    for f in flights:  # already in canonical (scene, object, trajectory) order
        if f.failed:
            manifest.failed_rollouts += 1
            continue
        rid = len(manifest.rollouts)
        scene = names[f.scene_index]
        new, dropped = chunk_rollout(f, rid, f.query, scene, first_chunk_id=len(chunks))
        chunks += new
        manifest.rollouts.append({"rollout_id": rid, "scene": scene, "query": f.query, "samples": len(f),
                                  "reference_duration_s": f.reference_duration})
        manifest.dropped_samples += dropped
    manifest.trajectory_count = len(manifest.rollouts)
    manifest.total_samples = sum(manifest.sample_counts)
    manifest.chunk_count = len(chunks)

    shuffled = shuffle_chunks(chunks, int(task_seed(cfg.master_seed, 0, 0).generate_state(1)[0]))
    write_dataset(shuffled, manifest, cfg.output)
    return SynthesisResult(manifest, Path(cfg.output), [f"{names[p.scene_index]}/{p.query}: {p.error}"
                                                        for p in plans if p.error])


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(doc, path.parent)
