import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from skyforge.world import (GoalRegion, LinearScanIndex, SceneError, ScenePoint, SceneWorld, SemanticObject,
                            build_spatial_index, in_goal_region, load_scene, save_scene, scene_from_dict,
                            scene_to_dict, segment_collision_free, segments_collision_free)


def unit(i, dim=4):
    e = np.zeros(dim)
    e[i] = 1.0
    return e


def small_world(points=((5.0, 5.0, 0.0),), bubble=0.25):
    obj = SemanticObject(0, "box", [1.0, 1.0, 0.0], unit(0))
    pts = [ScenePoint(p) for p in points]
    return SceneWorld.from_points(pts, [obj], ([0, 0, -1], [10, 10, 1]), bubble_radius=bubble)


def test_semantic_object_requires_unit_embedding():
    with pytest.raises(SceneError):
        SemanticObject(0, "x", [0, 0, 0], [1.0, 1.0])
    with pytest.raises(SceneError):
        SemanticObject(0, "x", [0, math.nan, 0], [1.0, 0.0])


def test_centroid_outside_bounds_rejected():
    obj = SemanticObject(0, "box", [20.0, 1.0, 0.0], unit(0))
    with pytest.raises(SceneError):
        SceneWorld.from_points([], [obj], ([0, 0, -1], [10, 10, 1]))


def test_unknown_label_rejected():
    obj = SemanticObject(0, "box", [1.0, 1.0, 0.0], unit(0))
    with pytest.raises(SceneError):
        SceneWorld.from_points([ScenePoint((2, 2, 0), 7)], [obj], ([0, 0, -1], [10, 10, 1]))


def test_empty_index_raises():
    with pytest.raises(ValueError):
        build_spatial_index([])


def test_nearest_example():
    idx = build_spatial_index([ScenePoint((0, 0, 0)), ScenePoint((3, 4, 0)), ScenePoint((1, 1, 1))])
    d, i = idx.nearest(np.array([3.0, 3.0, 0.0]))
    assert i == 1
    assert d == pytest.approx(1.0)


def test_within_is_inclusive_and_sorted():
    idx = build_spatial_index([ScenePoint((2, 0, 0)), ScenePoint((0, 0, 0)), ScenePoint((1, 0, 0))])
    assert idx.within(np.zeros(3), 1.0).tolist() == [1, 2]
    assert idx.within(np.zeros(3), 0.999).tolist() == [1]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 400), st.integers(0, 2**31 - 1), st.floats(0.01, 3.0))
def test_index_matches_linear_scan(n, seed, r):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-5, 5, (n, 3))
    kd, lin = build_spatial_index(pts), LinearScanIndex(pts)
    for q in rng.uniform(-6, 6, (20, 3)):
        assert kd.nearest(q) == lin.nearest(q)
        assert kd.within(q, r).tolist() == lin.within(q, r).tolist()
    qs = rng.uniform(-6, 6, (50, 3))
    assert np.array_equal(kd.any_within(qs, r), lin.any_within(qs, r))


def test_segment_through_bubble_collides():
    w = small_world()
    assert not segment_collision_free([0.5, 5.0, 0.0], [9.5, 5.0, 0.0], w)
    assert segment_collision_free([0.5, 6.0, 0.0], [9.5, 6.0, 0.0], w)


def test_segment_leaving_bounds_collides():
    w = small_world()
    assert not segment_collision_free([9.0, 9.0, 0.0], [11.0, 9.0, 0.0], w)


def test_segment_grazing_just_outside_bubble_is_free():
    w = small_world()
    assert segment_collision_free([0.5, 5.2501, 0.0], [9.5, 5.2501, 0.0], w)


def _fine_oracle(a, b, w, step=1e-3):
    # much finer sampling than the production check
    n = int(np.ceil(np.linalg.norm(np.subtract(b, a)) / step)) + 1
    t = np.linspace(0, 1, n)[:, None]
    pts = np.asarray(a) + t * (np.asarray(b) - np.asarray(a))
    d = np.linalg.norm(pts[:, None, :] - w.points[None], axis=2).min(axis=1)
    return bool((d > w.bubble_radius).all())


def test_segment_check_agrees_with_fine_oracle_away_from_boundary():
    rng = np.random.default_rng(3)
    w = small_world(points=rng.uniform([1, 1, 0], [9, 9, 0], (15, 3)))
    agree = 0
    for _ in range(200):
        a, b = rng.uniform([0.5, 0.5, 0], [9.5, 9.5, 0], (2, 3))
        fine = _fine_oracle(a, b, w)
        coarse = segment_collision_free(a, b, w, step=0.01)
        # coarse free => fine free can only fail within the sampling gap
        if coarse != fine:
            pts = np.linspace(a, b, 20001)
            margin = np.linalg.norm(pts[:, None] - w.points[None], axis=2).min() - w.bubble_radius
            assert abs(margin) < 1e-4
        else:
            agree += 1
    assert agree >= 195


def test_segment_check_symmetric():
    rng = np.random.default_rng(4)
    w = small_world(points=rng.uniform([1, 1, 0], [9, 9, 0], (15, 3)))
    for _ in range(100):
        a, b = rng.uniform([0.5, 0.5, 0], [9.5, 9.5, 0], (2, 3))
        assert segment_collision_free(a, b, w) == segment_collision_free(b, a, w)


def test_vectorized_segments_match_scalar():
    rng = np.random.default_rng(5)
    w = small_world(points=rng.uniform([1, 1, 0], [9, 9, 0], (15, 3)))
    a = np.array([5.0, 0.5, 0.0])
    ends = rng.uniform([0.5, 0.5, 0], [9.5, 9.5, 0], (40, 3))
    assert segments_collision_free(a, ends, w).tolist() == [segment_collision_free(a, e, w) for e in ends]


def test_goal_region_boundary_inclusive():
    g = GoalRegion([0, 0, 0], 2.0)
    assert in_goal_region([2.0, 0, 0], g)
    assert not in_goal_region([2.0 + 1e-9, 0, 0], g)


def test_goal_region_half_space():
    g = GoalRegion([0, 0, 0], 2.0, approach_normal=[1, 0, 0])
    assert in_goal_region([1, 0, 0], g)
    assert not in_goal_region([-1, 0, 0], g)


def test_scene_round_trip(tmp_path, scene):
    p = tmp_path / "s.json"
    save_scene(scene, p)
    w = load_scene(p)
    assert np.array_equal(w.points, scene.points)
    assert np.array_equal(w.labels, scene.labels)
    assert [o.name for o in w.objects] == [o.name for o in scene.objects]
    assert scene_to_dict(w) == scene_to_dict(scene)


def test_scene_version_checked():
    doc = scene_to_dict(small_world())
    doc["scene_version"] = 99
    with pytest.raises(SceneError):
        scene_from_dict(doc)


def test_malformed_scene_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(SceneError):
        load_scene(p)
    p.write_text(json.dumps({"scene_version": 1}))
    with pytest.raises(SceneError):
        load_scene(p)
