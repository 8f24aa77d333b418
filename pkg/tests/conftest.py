import numpy as np
import pytest

from skyforge.planner import PlannerConfig, grow_tree
from skyforge.scenes import make_scene
from skyforge.trajgen import TrajConfig, generate_references


@pytest.fixture(scope="session")
def scene():
    return make_scene(seed=2)


@pytest.fixture(scope="session")
def tree(scene):
    return grow_tree(scene, scene.objects[0], PlannerConfig(iterations=1500, rng_seed=1))


@pytest.fixture(scope="session")
def references(scene, tree):
    return generate_references(tree, scene, TrajConfig(max_trajectories=60), rng=np.random.default_rng(0))


@pytest.fixture(scope="session")
def long_references(references):
    # long enough for a 3 s warm-up plus a 2 s horizon
    return [r for r in references if len(r) > 101]
