"""Environment-spanning RRT* rooted at a semantic object centroid.

The tree is grown outward from the object; trajectories are later flown
from the leaves back to the root.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from .nodegrid import NodeGrid
from .world import SceneWorld, SemanticObject, segment_collision_free

TREE_VERSION = 1
_SLACK = 1e-9
_CERT_MARGIN = 1e-9


class PlannerError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlannerConfig:
    eta: float = 1.0
    iterations: int = 2000
    alpha: Optional[float] = None  # None: derived from the scene bounds
    dimension: int = 2
    rng_seed: int = 0
    planning_altitude: Optional[float] = None  # None: root centroid altitude
    neighbor_index: str = "grid"  # or "kdtree", "linear"
    rebuild_every: int = 512
    collision_step: Optional[float] = None

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.dimension not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if self.neighbor_index not in ("grid", "kdtree", "linear"):
            raise ValueError("neighbor_index must be 'grid', 'kdtree' or 'linear'")


def default_alpha(world: SceneWorld, dimension: int = 2) -> float:
    """alpha = 2 (mu / zeta_d)^(1/d), with the bounds measure as mu.

    The resulting gamma = alpha (1 + 1/d)^(1/d) sits on the classic RRT*
    asymptotic-optimality threshold.
    """
    extent = world.bounds_max - world.bounds_min
    if dimension == 2:
        mu, zeta = float(extent[0] * extent[1]), math.pi
    else:
        mu, zeta = float(np.prod(extent)), 4.0 / 3.0 * math.pi
    return 2.0 * (mu / zeta) ** (1.0 / dimension)


def gamma_of(config: PlannerConfig) -> float:
    d = config.dimension
    return config.alpha * (1.0 + 1.0 / d) ** (1.0 / d)


def search_radius(tree_size: float, config: PlannerConfig) -> float:
    """max(eta, gamma (ln|V| / |V|)^(1/d)); accepts real-valued sizes."""
    if tree_size < 1:
        raise ValueError("tree size must be >= 1")
    if config.alpha is None:
        raise ValueError("config.alpha unresolved; call resolve_config first")
    ratio = math.log(tree_size) / tree_size
    return max(config.eta, gamma_of(config) * ratio ** (1.0 / config.dimension))


def resolve_config(config: PlannerConfig, world: SceneWorld, root: SemanticObject) -> PlannerConfig:
    alpha = config.alpha if config.alpha is not None else default_alpha(world, config.dimension)
    alt = config.planning_altitude if config.planning_altitude is not None else float(root.centroid[2])
    return replace(config, alpha=alpha, planning_altitude=alt)


def steer(v_near, q_rand, eta: float) -> Optional[np.ndarray]:
    """Move from v_near toward q_rand by at most eta; None when they coincide."""
    v_near = np.asarray(v_near, dtype=float)
    diff = np.asarray(q_rand, dtype=float) - v_near
    dist = math.hypot(*diff)  # no underflow for tiny offsets
    if dist == 0.0:
        return None
    if dist <= eta:
        return np.array(q_rand, dtype=float)
    return v_near + eta * (diff / dist)


def sample_free(bounds_min, bounds_max, rng: np.random.Generator, dimension: int = 2,
                altitude: Optional[float] = None, size: Optional[int] = None) -> np.ndarray:
    """Uniform samples in the bounds box, or on the plane z = altitude when d = 2."""
    lo = np.asarray(bounds_min, dtype=float)
    hi = np.asarray(bounds_max, dtype=float)
    n = 1 if size is None else size
    if dimension == 2:
        if altitude is None:
            raise ValueError("planar sampling needs an altitude")
        xy = lo[:2] + rng.random((n, 2)) * (hi[:2] - lo[:2])
        out = np.column_stack([xy, np.full(n, float(altitude))])
    else:
        out = lo + rng.random((n, 3)) * (hi - lo)
    return out[0] if size is None else out


class TreeNode(NamedTuple):
    position: np.ndarray
    parent: Optional[int]
    cost: float
    children: list


class PlanTree:
    """RRT* tree with array storage. Node 0 is the root."""

    def __init__(self, root_position, capacity: int = 64, object_id: int = -1, object_name: str = ""):
        capacity = max(capacity, 1)
        self.positions = np.empty((capacity, 3))
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.cost = np.zeros(capacity)
        self.children: list[list[int]] = [[]]
        self.positions[0] = root_position
        self.size = 1
        self.object_id = object_id
        self.object_name = object_name

    def __len__(self):
        return self.size

    def _grow(self):
        cap = self.positions.shape[0] * 2
        self.positions = np.resize(self.positions, (cap, 3))
        parent = np.full(cap, -1, dtype=np.int64)
        parent[: self.size] = self.parent[: self.size]
        self.parent = parent
        self.cost = np.resize(self.cost, cap)

    def add_node(self, position, parent: int) -> int:
        if self.size == self.positions.shape[0]:
            self._grow()
        i = self.size
        self.positions[i] = position
        self.parent[i] = parent
        self.cost[i] = self.cost[parent] + _dist(self.positions[i], self.positions[parent])
        self.children.append([])
        self.children[parent].append(i)
        self.size += 1
        return i

    def node(self, i: int) -> TreeNode:
        p = int(self.parent[i])
        return TreeNode(self.positions[i].copy(), None if p < 0 else p, float(self.cost[i]),
                        list(self.children[i]))

    @property
    def root_position(self) -> np.ndarray:
        return self.positions[0]

    def nodes(self) -> np.ndarray:
        return self.positions[: self.size]

    def costs(self) -> np.ndarray:
        return self.cost[: self.size]

    def parents(self) -> np.ndarray:
        return self.parent[: self.size]

    def edges(self) -> list[tuple[int, int]]:
        return [(int(self.parent[i]), i) for i in range(1, self.size)]

    def leaves(self) -> list[int]:
        return [i for i in range(self.size) if not self.children[i] and i != 0] or (
            [0] if self.size == 1 else [])

    def is_ancestor(self, a: int, b: int) -> bool:
        """True when `a` lies on b's parent chain (or a == b)."""
        while b >= 0:
            if b == a:
                return True
            b = int(self.parent[b])
        return False

    def path_to_root(self, i: int) -> list[int]:
        out = [i]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
            if len(out) > self.size:
                raise PlannerError("cycle in parent pointers")
        return out

    def depth(self, i: int) -> int:
        return len(self.path_to_root(i)) - 1

    def max_depth(self) -> int:
        depth = np.zeros(self.size, dtype=np.int64)
        stack = [0]
        while stack:
            n = stack.pop()
            for c in self.children[n]:
                depth[c] = depth[n] + 1
                stack.append(c)
        return int(depth.max())

    def to_dict(self) -> dict:
        nodes = [[i, *map(float, self.positions[i]), (None if self.parent[i] < 0 else int(self.parent[i])),
                  float(self.cost[i])] for i in range(self.size)]
        return {"tree_version": TREE_VERSION, "object_id": self.object_id,
                "object_name": self.object_name, "nodes": nodes}

    @classmethod
    def from_dict(cls, doc: dict) -> "PlanTree":
        nodes = doc["nodes"]
        n = len(nodes)
        tree = cls(nodes[0][1:4], capacity=n, object_id=doc.get("object_id", -1),
                   object_name=doc.get("object_name", ""))
        if [row[0] for row in nodes] != list(range(n)):
            raise PlannerError("tree nodes must be listed in id order")
        # Parents may carry higher ids than their children after rewiring.
        tree.positions[:n] = [row[1:4] for row in nodes]
        tree.parent[:n] = [-1 if row[4] is None else int(row[4]) for row in nodes]
        tree.cost[:n] = [row[5] for row in nodes]
        tree.children = [[] for _ in range(n)]
        for i in range(1, n):
            tree.children[int(tree.parent[i])].append(i)
        tree.size = n
        return tree

    def summary(self) -> dict:
        pts = self.nodes()
        return {"nodes": self.size, "max_depth": self.max_depth(), "leaves": len(self.leaves()),
                "coverage_min": pts.min(axis=0).tolist(), "coverage_max": pts.max(axis=0).tolist()}


def _dist(a, b) -> float:
    d = a - b
    return math.sqrt(float(d @ d))


def _distances(points, q):
    # Same expression as the compiled grid kernels, element for element.
    dx = points[:, 0] - q[0]
    dy = points[:, 1] - q[1]
    dz = points[:, 2] - q[2]
    return np.sqrt((dx * dx + dy * dy) + dz * dz)


class _NodeIndex:
    """Nearest / radius queries over the growing node set.

    grid mode keeps every node in a compiled column grid (O(1) insertion).
    kd mode keeps a kd-tree over the first `indexed` nodes, rebuilt every
    `rebuild_every` insertions, and scans the un-indexed tail exhaustively.
    Linear mode scans everything. All modes make the final decision with
    the same distance arithmetic, so they return identical answers.
    """

    def __init__(self, tree: PlanTree, mode: str, rebuild_every: int, bounds=None, cell_size: float = 1.0):
        self.tree = tree
        self.mode = mode
        self.rebuild_every = rebuild_every
        self.kd = None
        self.grid = None
        self.indexed = 0
        if mode == "grid":
            if bounds is None:
                bounds = (tree.nodes().min(axis=0) - 1.0, tree.nodes().max(axis=0) + 1.0)
            self.grid = NodeGrid(bounds[0], bounds[1], cell_size, len(tree.positions))
            self.update()

    def update(self):
        if self.grid is not None:
            pos = self.tree.positions
            for i in range(self.indexed, self.tree.size):
                self.grid.insert(i, pos[i])
            self.indexed = self.tree.size
        elif self.mode == "kdtree" and self.tree.size - self.indexed >= self.rebuild_every:
            self.indexed = self.tree.size
            self.kd = cKDTree(self.tree.positions[: self.indexed].copy())

    def nearest(self, q) -> int:
        pos = self.tree.positions
        n = self.tree.size
        if self.grid is not None:
            return self.grid.nearest(pos, q)
        if self.kd is None:
            return int(_distances(pos[:n], q).argmin())
        i = int(self.kd.query(q)[1])
        best_d, best = _distances(pos[i : i + 1], q)[0], i
        if n > self.indexed:
            d = _distances(pos[self.indexed:n], q)
            j = int(d.argmin())
            if d[j] < best_d:
                best = self.indexed + j
        return best

    def within(self, q, r: float) -> np.ndarray:
        pos = self.tree.positions
        n = self.tree.size
        if self.grid is not None:
            return self.grid.within(pos, q, r)
        if self.kd is None:
            return np.flatnonzero(_distances(pos[:n], q) <= r)
        cand = np.array(self.kd.query_ball_point(q, r * (1 + _SLACK) + 1e-12, return_sorted=True),
                        dtype=np.intp)
        if len(cand):
            cand = cand[_distances(pos[cand], q) <= r]
        if n > self.indexed:
            tail = np.flatnonzero(_distances(pos[self.indexed:n], q) <= r) + self.indexed
            cand = np.concatenate([cand, tail])
        return cand


def rewire_node(tree: PlanTree, v: int, v_new: int, world: Optional[SceneWorld] = None,
                step: Optional[float] = None) -> bool:
    """Reparent `v` onto `v_new` when strictly cheaper; update its whole subtree.

    Returns False (tree untouched) when the saving is not strictly positive,
    when `v_new` lies in v's subtree, or when the edge collides.
    """
    if v == 0:
        return False
    new_cost = tree.cost[v_new] + _dist(tree.positions[v], tree.positions[v_new])
    if not new_cost < tree.cost[v]:
        return False
    if tree.is_ancestor(v, v_new):
        return False
    if world is not None and not segment_collision_free(tree.positions[v], tree.positions[v_new], world, step):
        return False
    _reparent(tree, v, v_new, new_cost)
    return True


def _reparent(tree: PlanTree, v: int, v_new: int, new_cost: float) -> None:
    old = int(tree.parent[v])
    tree.children[old].remove(v)
    tree.children[v_new].append(v)
    tree.parent[v] = v_new
    tree.cost[v] = new_cost
    stack = list(tree.children[v])
    pos, cost, parent = tree.positions, tree.cost, tree.parent
    while stack:
        c = stack.pop()
        cost[c] = cost[parent[c]] + _dist(pos[c], pos[parent[c]])
        stack.extend(tree.children[c])


Observer = Callable[[PlanTree, int], None]


def grow_tree(world: SceneWorld, root: SemanticObject, config: PlannerConfig,
              observer: Optional[Observer] = None) -> PlanTree:
    """Run the RRT* loop for config.iterations samples and return the tree.

    `observer(tree, iteration)` is called after every iteration (tests use it
    to check invariants as the tree grows).
    """
    cfg = resolve_config(config, world, root)
    step = cfg.collision_step if cfg.collision_step is not None else world.bubble_radius / 2
    root_pos = root.centroid.copy()
    if cfg.dimension == 2:
        root_pos[2] = cfg.planning_altitude
    if not world.points_free(root_pos[None])[0]:
        raise PlannerError(f"root of {root.name!r} is in collision at the planning altitude")

    rng = np.random.default_rng(cfg.rng_seed)
    samples = sample_free(world.bounds_min, world.bounds_max, rng, cfg.dimension,
                          cfg.planning_altitude, size=cfg.iterations)
    tree = PlanTree(root_pos, capacity=cfg.iterations + 1, object_id=root.object_id,
                    object_name=root.name)
    index = _NodeIndex(tree, cfg.neighbor_index, cfg.rebuild_every, (world.bounds_min, world.bounds_max), cfg.eta)
    eta = cfg.eta
    bubble = world.bubble_radius
    lo, hi = world.bounds_min, world.bounds_max

    def in_bounds(p) -> bool:
        return bool(((p >= lo) & (p <= hi)).all())

    pos = tree.positions  # capacity is preallocated, so this view stays valid
    clear = [world.clearance(root_pos)]

    for it in range(cfg.iterations):
        r = search_radius(tree.size, cfg)
        q_rand = samples[it]
        near = index.nearest(q_rand)
        q_new = steer(pos[near], q_rand, eta)
        if q_new is None or not in_bounds(q_new):
            if observer:
                observer(tree, it)
            continue
        # Edge (a, b) of length L is provably free when (c_a + c_b - L) / 2 > bubble,
        # with c the obstacle clearance at each endpoint.
        clear_new = world.clearance(q_new)
        d_near = _dist(pos[near], q_new)
        certified = (clear_new > bubble + _CERT_MARGIN
                     and clear_new + clear[near] - d_near > 2 * bubble + _CERT_MARGIN)
        if not (certified or segment_collision_free(pos[near], q_new, world, step)):
            if observer:
                observer(tree, it)
            continue

        nbrs = index.within(q_new, r)
        d = _distances(pos[nbrs], q_new)
        through = tree.cost[nbrs] + d
        free_cache = {near: True}

        def edge_free(k: int) -> bool:
            j = int(nbrs[k])
            ok = free_cache.get(j)
            if ok is None:
                if clear_new + clear[j] - d[k] > 2 * bubble + _CERT_MARGIN:
                    ok = True
                else:
                    ok = segment_collision_free(pos[j], q_new, world, step)
                free_cache[j] = ok
            return ok

        best = near
        # nbrs is sorted by id, so a stable sort breaks cost ties by lowest id.
        for k in through.argsort(kind="stable").tolist():
            if edge_free(k):
                best = int(nbrs[k])
                break
        v_new = tree.add_node(q_new, best)
        clear.append(clear_new)
        c_new = tree.cost[v_new]

        # Rewire candidates in ascending id order; costs are re-read after
        # each reparent because subtrees may overlap.
        improve = (c_new + d < tree.cost[nbrs]).nonzero()[0]
        for k in improve.tolist():
            j = int(nbrs[k])
            if j == best or j == 0:
                continue
            cand = c_new + d[k]
            if cand < tree.cost[j] and not tree.is_ancestor(j, v_new) and edge_free(k):
                _reparent(tree, j, v_new, cand)
        index.update()
        if observer:
            observer(tree, it)

    if tree.size == 1 and cfg.iterations > 1:
        raise PlannerError(f"environment unreachable from {root.name!r}: no node accepted")
    return tree


def save_tree(tree: PlanTree, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(tree.to_dict()))


def load_tree(path) -> PlanTree:
    return PlanTree.from_dict(json.loads(Path(path).read_text()))
