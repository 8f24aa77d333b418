"""Matplotlib figures for the CLI report paths (files only, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .dataset import CHUNK_SAMPLES, DatasetManifest  # noqa: E402
from .planner import PlanTree  # noqa: E402
from .renderer import HeatmapImage  # noqa: E402
from .world import SceneWorld  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_tree(tree: PlanTree, world: SceneWorld, path, references=()) -> Path:
    """Top-down view: obstacles, tree edges, root, optional reference paths."""
    fig, ax = plt.subplots(figsize=(6, 6))
    if len(world.points):
        bg = world.labels < 0
        ax.scatter(world.points[bg, 0], world.points[bg, 1], s=2, c="0.6", label="obstacles")
        ax.scatter(world.points[~bg, 0], world.points[~bg, 1], s=4, c="tab:orange", label="objects")
    pos = tree.nodes()
    segs = np.array([[pos[p], pos[c]] for p, c in tree.edges()])
    if len(segs):
        from matplotlib.collections import LineCollection
        ax.add_collection(LineCollection(segs[:, :, :2], linewidths=0.4, colors="tab:blue", alpha=0.6))
    for ref in references:
        ax.plot(ref.p[:, 0], ref.p[:, 1], lw=1.2, c="tab:red")
    ax.plot(*pos[0, :2], marker="*", ms=14, c="tab:green", label=tree.object_name or "root")
    ax.set_xlim(world.bounds_min[0], world.bounds_max[0])
    ax.set_ylim(world.bounds_min[1], world.bounds_max[1])
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(f"{len(tree)} nodes")
    ax.legend(loc="upper right", fontsize=7)
    return _save(fig, path)


def plot_heatmap(image: HeatmapImage, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.imshow(image.rgb_u8(), interpolation="nearest")
    ax.set_axis_off()
    return _save(fig, path)


def plot_dataset_stats(manifest: DatasetManifest, path) -> Path:
    """Histogram of per-rollout durations with the chunk length marked."""
    counts = np.array(manifest.sample_counts, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if len(counts):
        ax.hist((counts - 1) / manifest.rate_hz, bins=min(30, max(5, len(counts) // 2)), color="tab:blue")
    ax.axvline(CHUNK_SAMPLES / manifest.rate_hz, c="k", ls="--", lw=1, label="chunk length")
    ax.set_xlabel("rollout duration [s]")
    ax.set_ylabel("rollouts")
    ax.set_title(f"{manifest.trajectory_count} rollouts, {manifest.total_samples} samples")
    ax.legend(fontsize=7)
    return _save(fig, path)
