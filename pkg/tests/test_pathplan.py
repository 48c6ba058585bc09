import numpy as np
import pytest

from inhand.geometry import Pose, pose_distance
from inhand.pathplan import (PathPlanner, PathPlanningError, PlannerParams, is_valid_pose, path_length, plan_path)
from inhand.scenario import Scenario, builtin_config, load_config


@pytest.fixture(scope="module")
def lift():
    return Scenario(load_config(builtin_config("lift")))


def free(pose):
    return True, 0


def wall(pose, half=(0.005, 0.03, 0.03)):
    """Axis-aligned box obstacle at the origin (position only)."""
    inside = np.all(np.abs(pose.p) < np.asarray(half))
    return (not inside), (None if inside else 0)


START = Pose(np.array([-0.1, 0.0, 0.0]))
GOAL = Pose(np.array([0.1, 0.0, 0.0]))


def test_below_floor_invalid(lift):
    ok, w = is_valid_pose(Pose(np.array([0.0, 0.0, -0.05])), lift.evaluator, lift.candidates)
    assert not ok and w is None


def test_start_valid_with_initial_grasp(lift):
    ok, w = is_valid_pose(lift.cfg.start, lift.evaluator, [lift.G_s])
    assert ok and w == 0
    assert lift.evaluator.ik(lift.cfg.start, lift.G_s).d_star < 1e-6


def test_start_witness_reaches(lift):
    ok, w = is_valid_pose(lift.cfg.start, lift.evaluator, lift.candidates)
    assert ok and lift.evaluator.ik(lift.cfg.start, lift.candidates[w]).d_star < 1e-6


def test_out_of_reach_invalid(lift):
    # farther above the palm than the longest finger chain can extend
    reach = max(sum(np.linalg.norm(lk.end) for lk in f.links) for f in lift.hand.fingers)
    pose = Pose(np.array([0.0, 0.0, 2.0 * reach + 0.1]))
    ok, _ = is_valid_pose(pose, lift.evaluator, lift.candidates)
    assert not ok


def test_goal_equals_start():
    path = plan_path(START, START.copy(), free)
    assert len(path) == 2 and path_length(path) == 0.0


def test_free_space_near_straight_line():
    path = plan_path(START, GOAL, free, PlannerParams(samples=2000))
    straight = pose_distance(START, GOAL, 0.1)
    assert path_length(path) <= 1.05 * straight


@pytest.mark.parametrize("which", ["start", "goal"])
def test_invalid_endpoint_errors(which):
    bad = Pose(np.zeros(3))
    s, g = (bad, GOAL) if which == "start" else (START, bad)
    with pytest.raises(PathPlanningError) as ei:
        plan_path(s, g, wall)
    assert ei.value.kind == f"{which} invalid"


def test_disconnected():
    # slab across the whole sampling box
    with pytest.raises(PathPlanningError) as ei:
        plan_path(START, GOAL, lambda p: wall(p, (0.005, 1.0, 1.0)), PlannerParams(samples=100))
    assert ei.value.kind == "disconnected"


def test_detour_waypoints_and_segments_valid():
    planner = PathPlanner(wall, PlannerParams(samples=500, seed=3))
    path = planner.plan(START, GOAL)
    assert all(wall(w)[0] for w in path.waypoints)
    for a, b in zip(path.waypoints, path.waypoints[1:]):
        assert planner.segment_valid(a, b)
    # cannot beat the straight line, and must go around the wall edge
    assert path_length(path) > pose_distance(START, GOAL, 0.1)
    assert all(w is not None for w in path.witnesses)


def test_search_cost_non_increasing_in_budget():
    for seed in range(5):
        costs = []
        for n in (150, 300, 600):
            planner = PathPlanner(wall, PlannerParams(samples=n, seed=seed, shortcut=False))
            try:
                planner.plan(START, GOAL)
            except PathPlanningError:
                costs.append(np.inf)
                continue
            costs.append(planner.search_cost)
        assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:])), costs
        assert np.isfinite(costs[-1])


def test_deterministic():
    a = plan_path(START, GOAL, wall, PlannerParams(samples=300, seed=9))
    b = plan_path(START, GOAL, wall, PlannerParams(samples=300, seed=9))
    assert len(a) == len(b)
    for x, y in zip(a.waypoints, b.waypoints):
        assert np.array_equal(x.p, y.p) and np.array_equal(x.R, y.R)


def test_large_rotation_subdivided():
    from scipy.spatial.transform import Rotation
    g = Pose(np.array([0.1, 0.0, 0.0]), Rotation.from_euler("z", 170, degrees=True).as_matrix())
    path = plan_path(START, g, free)
    from inhand.geometry import quat_angle
    for a, b in zip(path.waypoints, path.waypoints[1:]):
        assert quat_angle(a.quat, b.quat) <= np.deg2rad(45) + 1e-9
