"""skyforge command line.

Exit codes:
    0  success
    2  usage error (bad flags, empty query list, invalid config values)
    3  unreadable or malformed input file (scene, config, dataset)
    4  unknown object / query name (available names go to stderr)
    5  nothing produced (planning failed, no feasible trajectory, no successful rollout)
    6  dataset verification failed
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_UNKNOWN_OBJECT = 4
EXIT_NO_OUTPUT = 5
EXIT_VERIFY = 6


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _print_table(rows, out=None):
    out = out or sys.stdout
    for k, v in rows:
        if isinstance(v, float):
            v = f"{v:.6g}"
        elif isinstance(v, (list, tuple)):
            v = ",".join(f"{x:.6g}" if isinstance(x, float) else str(x) for x in v)
        print(f"{k}\t{v}", file=out)


def _load_scene(path):
    from .world import SceneError, load_scene
    try:
        return load_scene(path)
    except SceneError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc


def _resolve_object(world, name):
    try:
        return world.object_by_name(name)
    except KeyError:
        names = ", ".join(o.name for o in world.objects) or "(none)"
        raise CliError(EXIT_UNKNOWN_OBJECT, f"unknown object {name!r}; available: {names}") from None


def cmd_plan(args) -> int:
    from .planner import PlannerConfig, PlannerError, grow_tree, save_tree
    world = _load_scene(args.scene)
    obj = _resolve_object(world, args.object)
    try:
        cfg = PlannerConfig(eta=args.eta, iterations=args.iters, rng_seed=args.seed)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    try:
        tree = grow_tree(world, obj, cfg)
    except PlannerError as exc:
        raise CliError(EXIT_NO_OUTPUT, str(exc)) from exc
    save_tree(tree, args.out)
    s = tree.summary()
    _print_table([("tree", args.out), ("object", obj.name), ("nodes", s["nodes"]), ("leaves", s["leaves"]),
                  ("max_depth", s["max_depth"]), ("coverage_min", s["coverage_min"]),
                  ("coverage_max", s["coverage_max"])])
    if args.figure:
        from .plotting import plot_tree
        _print_table([("figure", str(plot_tree(tree, world, args.figure)))])
    return EXIT_OK


def _build_config(args):
    from .pipeline import ConfigError, RunConfig, apply_seed_env, load_config
    try:
        cfg = load_config(args.config) if args.config else RunConfig(scenes=[], queries=[])
    except ConfigError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    cfg = apply_seed_env(cfg)
    if args.scene:
        cfg.scenes = list(args.scene)
    if args.query:
        cfg.queries = list(args.query)
    if args.out is not None:
        cfg.output = args.out
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.trajectories is not None:
        cfg.trajectories_per_query = args.trajectories
    if args.iters is not None:
        cfg.planner = replace(cfg.planner, iterations=args.iters)
    if args.v_max is not None:
        cfg.v_max = args.v_max
    return cfg


def cmd_synthesize(args) -> int:
    from .dataset import dataset_stats
    from .pipeline import ConfigError, synthesize
    try:
        cfg = _build_config(args)
        cfg.validate()
    except ConfigError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    try:
        result = synthesize(cfg, progress=lambda m: print(m, file=sys.stderr))
    except KeyError as exc:
        raise CliError(EXIT_UNKNOWN_OBJECT, exc.args[0]) from exc
    except ConfigError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    for e in result.pair_errors:
        print(f"warning: {e}", file=sys.stderr)
    m = result.manifest
    stats = dataset_stats(m)
    _print_table([("dataset", str(result.path)), ("master_seed", cfg.master_seed)] + list(stats.items())
                 + [("manifest_hash", m.to_dict()["manifest_hash"])])
    if m.trajectory_count == 0:
        raise CliError(EXIT_NO_OUTPUT, "zero successful rollouts")
    return EXIT_OK


def cmd_render(args) -> int:
    from .dynamics import DroneState, quat_from_yaw
    from .renderer import CameraModel, project_point, render_heatmap, write_ppm
    from .trajgen import yaw_toward
    world = _load_scene(args.scene)
    obj = _resolve_object(world, args.query)
    p = np.array(args.pos, dtype=float)
    yaw = args.yaw if args.yaw is not None else yaw_toward(p, obj.centroid)
    state = DroneState(p, np.zeros(3), quat_from_yaw(yaw))
    cam = CameraModel()
    img, memory = render_heatmap(state, world, obj.embedding, cam)
    write_ppm(img, args.out)
    row, col = np.unravel_index(int(np.argmax(img.scores)), img.scores.shape)
    proj = project_point(obj.centroid, state, cam)
    rows = [("image", args.out), ("yaw", yaw), ("argmax_row", int(row)), ("argmax_col", int(col)),
            ("normalizer", memory if memory is not None else 1.0)]
    if proj is not None:
        rows += [("centroid_u", proj[0]), ("centroid_v", proj[1]), ("centroid_depth", proj[2])]
    _print_table(rows)
    if args.png:
        from .plotting import plot_heatmap
        _print_table([("figure", str(plot_heatmap(img, args.png)))])
    return EXIT_OK


def _read_manifest(path):
    from .dataset import DatasetError, read_manifest
    try:
        return read_manifest(path)
    except DatasetError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc


def cmd_stats(args) -> int:
    from .dataset import DatasetError, dataset_stats
    m = _read_manifest(args.dataset)
    try:
        stats = dataset_stats(m)
    except DatasetError as exc:
        raise CliError(EXIT_VERIFY, str(exc)) from exc
    _print_table(list(stats.items()))
    if args.figure:
        from .plotting import plot_dataset_stats
        _print_table([("figure", str(plot_dataset_stats(m, args.figure)))])
    return EXIT_OK


def cmd_verify(args) -> int:
    from .dataset import verify_dataset
    if not Path(args.dataset).is_file():
        raise CliError(EXIT_INPUT, f"dataset not found: {args.dataset}")
    problems = verify_dataset(args.dataset)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        raise CliError(EXIT_VERIFY, f"verification failed: {problems[0]}")
    _print_table([("dataset", args.dataset), ("status", "clean")])
    return EXIT_OK


def cmd_make_scene(args) -> int:
    from .scenes import make_scene
    from .world import save_scene
    world = make_scene(seed=args.seed, n_objects=args.objects, n_clutter=args.clutter,
                       name=args.name or "")
    save_scene(world, args.out)
    _print_table([("scene", args.out), ("name", world.name), ("points", len(world.points)),
                  ("objects", [o.name for o in world.objects])])
    return EXIT_OK


def _finite(s):
    x = float(s)
    if not math.isfinite(x):
        raise argparse.ArgumentTypeError(f"not a finite number: {s}")
    return x


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skyforge", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="grow a tree from an object and write it as JSON")
    p.add_argument("--scene", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eta", type=_finite, default=1.0)
    p.add_argument("--out", required=True)
    p.add_argument("--figure", help="also save a top-down PNG of the tree")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("synthesize", help="run the full pipeline and write a dataset")
    p.add_argument("--config", help="JSON run config; flags below override it")
    p.add_argument("--scene", action="append", help="scene file (repeatable)")
    p.add_argument("--query", action="append", help="query / object name (repeatable)")
    p.add_argument("--out", help="dataset container path")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--trajectories", type=int, help="references flown per (scene, query)")
    p.add_argument("--iters", type=int, help="planner iterations")
    p.add_argument("--v-max", dest="v_max", type=_finite)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("render", help="render one heatmap frame")
    p.add_argument("--scene", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--pos", type=_finite, nargs=3, required=True, metavar=("X", "Y", "Z"))
    p.add_argument("--yaw", type=_finite, help="default: face the query object")
    p.add_argument("--out", required=True, help="PPM output")
    p.add_argument("--png", help="also save a PNG figure")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("stats", help="tab-delimited dataset statistics")
    p.add_argument("dataset")
    p.add_argument("--figure", help="also save a duration histogram PNG")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("verify", help="check every container and manifest identity")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("make-scene", help="write a procedural demo scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--clutter", type=int, default=0)
    p.add_argument("--name")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_scene)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"skyforge: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"skyforge: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
