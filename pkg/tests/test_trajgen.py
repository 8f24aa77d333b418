import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skyforge.planner import PlanTree, PlannerConfig, grow_tree
from skyforge.scenes import empty_scene
from skyforge.trajgen import (GenerationReport, TrajConfig, TrajectoryError, extract_leaf_paths,
                              generate_references, smooth_cubic, spline_collision_free, yaw_profile, yaw_toward)
from skyforge.world import in_goal_region


def test_chain_path_reversed():
    t = PlanTree([0, 0, 0])
    a = t.add_node([1, 0, 0], 0)
    b = t.add_node([2, 0, 0], a)
    (leaf, wps), = extract_leaf_paths(t, min_length=0.5)
    assert leaf == b
    assert wps.tolist() == [[2, 0, 0], [1, 0, 0], [0, 0, 0]]


def test_star_gives_one_path_per_leaf():
    t = PlanTree([0, 0, 0])
    for k in range(5):
        t.add_node([math.cos(k), math.sin(k), 0.0], 0)
    paths = extract_leaf_paths(t, min_length=0.5)
    assert len(paths) == 5
    assert all(np.array_equal(w[-1], [0, 0, 0]) for _, w in paths)


def test_short_leaves_skipped():
    t = PlanTree([0, 0, 0])
    t.add_node([0.3, 0, 0], 0)
    assert extract_leaf_paths(t, min_length=1.0) == []


def test_paths_are_parent_chains(tree):
    for leaf, wps in extract_leaf_paths(tree, 1.0):
        i = leaf
        for p in wps:
            assert np.array_equal(tree.positions[i], p)
            i = tree.parent[i]
        assert i == -1


def test_two_point_spline_is_straight():
    tr = smooth_cubic([[0, 0, 0], [1, 0, 0]], 0.05, 1.0)
    assert tr.duration >= 1.0
    assert np.abs(tr.p[:, 1:]).max() == 0.0
    assert np.all(np.diff(tr.p[:, 0]) >= 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=2, max_size=12),
       st.floats(0.3, 3.0))
def test_spline_interpolates_and_respects_speed(pts, v_max):
    wps = np.array([[x, y, -1.0] for x, y in pts])
    keep = np.ones(len(wps), bool)
    keep[1:] = np.linalg.norm(np.diff(wps, axis=0), axis=1) > 1e-3
    wps = wps[keep]
    if len(wps) < 2:
        return
    tr = smooth_cubic(wps, 0.05, v_max)
    knots = tr.spline.x
    assert np.abs(tr.spline(knots) - wps).max() < 1e-9
    dense = np.linspace(0, tr.duration, int(tr.duration / 0.0005) + 2)
    assert np.linalg.norm(tr.spline(dense, 1), axis=1).max() <= v_max * (1 + 1e-3)
    assert np.array_equal(tr.p[0], wps[0]) and np.array_equal(tr.p[-1], wps[-1])
    assert len(tr) == round(tr.duration / 0.05) + 1


def test_spline_needs_two_points():
    with pytest.raises(TrajectoryError):
        smooth_cubic([[0, 0, 0], [0, 0, 0]])
    with pytest.raises(TrajectoryError):
        smooth_cubic([[0, 0, 0], [1, 0, 0]], v_max=0)


def test_yaw_toward_examples():
    assert yaw_toward([1, 0, 0], [0, 0, 0]) == pytest.approx(math.pi)
    assert yaw_toward([0, -1, 0], [0, 0, 0]) == pytest.approx(math.pi / 2)
    assert yaw_toward([0, 0, 0], [0, 0, 5], previous=0.3) == 0.3


@given(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), st.tuples(st.floats(-50, 50), st.floats(-50, 50)))
def test_yaw_heading_points_at_object(p, q):
    d = np.subtract(q, p)
    if np.linalg.norm(d) <= 1e-6:
        return
    y = yaw_toward([*p, 0], [*q, 0])
    assert np.dot([math.cos(y), math.sin(y)], d) >= 0.999 * np.linalg.norm(d)


def test_yaw_profile_rate_limited():
    pos = np.column_stack([np.linspace(-3, 3, 61), np.full(61, 0.1), np.zeros(61)])
    yaw = yaw_profile(pos, [0, 0, 0], 0.05, 2.0)
    assert np.abs(np.diff(yaw)).max() < 2.0 * 0.05


def test_references_reach_goal(scene, tree, references):
    obj = scene.object_by_id(tree.object_id)
    goal = scene.goal_region(obj)
    assert references
    for r in references:
        assert in_goal_region(r.p[-1], goal)
        assert np.linalg.norm(r.p[-1] - obj.centroid) <= scene.goal_region_radius
        assert np.array_equal(r.p[0], tree.positions[r.leaf])
        assert np.abs(np.diff(r.yaw)).max() < 2.0 * 0.05
        assert spline_collision_free(r, scene)
        assert np.linalg.norm(r.v, axis=1).max() <= 1.5


def test_empty_scene_no_discards():
    w = empty_scene()
    t = grow_tree(w, w.objects[0], PlannerConfig(iterations=300, rng_seed=0))
    rep = GenerationReport()
    refs = generate_references(t, w, TrajConfig(approach_bias=False), report=rep)
    assert rep.discarded_collision == 0 and rep.discarded_approach == 0
    assert rep.emitted == len(refs) > 0


def test_root_only_tree_has_no_trajectory():
    w = empty_scene()
    t = PlanTree(w.objects[0].centroid, object_id=0)
    with pytest.raises(TrajectoryError):
        generate_references(t, w)


def test_generation_reproducible(scene, tree):
    a = generate_references(tree, scene, TrajConfig(max_trajectories=20), rng=np.random.default_rng(4))
    b = generate_references(tree, scene, TrajConfig(max_trajectories=20), rng=np.random.default_rng(4))
    assert [len(r) for r in a] == [len(r) for r in b]
    assert all(np.array_equal(x.p, y.p) and np.array_equal(x.yaw, y.yaw) for x, y in zip(a, b))
