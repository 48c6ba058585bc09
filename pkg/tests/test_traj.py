import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from inhand.geometry import Pose
from inhand.traj import (PosePath, check_timestamps, external_at, fit_and_sample, make_cost, optimize_timestamps,
                         trajectory_cost)


def rot(axis, deg):
    return Rotation.from_rotvec(np.radians(deg) * np.asarray(axis, float)).as_matrix()


def line_path(N=2, length=0.1):
    return PosePath([Pose(np.array([length * i / (N - 1), 0.0, 0.0])) for i in range(N)])


def random_path(rng, N):
    wps = []
    for _ in range(N):
        # modest rotations keep the quaternion interpolation well-conditioned
        R = Rotation.from_rotvec(0.3 * rng.uniform(-1, 1, 3)).as_matrix()
        wps.append(Pose(rng.uniform(-0.1, 0.1, 3), R))
    return PosePath(wps)


def test_endpoint_velocities_zero(rng):
    for N in (2, 3, 5):
        path = random_path(rng, N)
        t = np.cumsum(np.r_[0.0, rng.uniform(0.3, 1.0, N - 1)])
        tr = fit_and_sample(path, t, 16)
        for tt in (0.0, tr.T):
            assert np.max(np.abs(tr.spline(tt, 1))) < 1e-6
        for s in (tr.samples[0], tr.samples[-1]):
            assert np.max(np.abs(s.v)) < 1e-6 and np.max(np.abs(s.w)) < 1e-6


def test_interpolates_waypoints(rng):
    path = random_path(rng, 4)
    t = np.array([0.0, 0.4, 1.1, 1.5])
    tr = fit_and_sample(path, t, 8)
    for ti, wp in zip(t, path.waypoints):
        s = tr.evaluate(ti)
        np.testing.assert_allclose(s.pose.p, wp.p, atol=1e-12)
        np.testing.assert_allclose(s.pose.R, wp.R, atol=1e-9)


def test_smoothstep_midpoint():
    tr = fit_and_sample(line_path(2, 0.1), [0.0, 2.0], 5)
    # cubic with zero end velocities: x(t) = D (3 s^2 - 2 s^3)
    for s in tr.samples:
        u = s.t / 2.0
        assert s.pose.p[0] == pytest.approx(0.1 * (3 * u ** 2 - 2 * u ** 3), abs=1e-12)
        assert s.v[0] == pytest.approx(0.1 * (6 * u - 6 * u ** 2) / 2.0, abs=1e-12)
    assert tr.samples[2].pose.p[0] == pytest.approx(0.05, abs=1e-12)


def test_uniform_sample_times():
    tr = fit_and_sample(line_path(3), [0.0, 0.7, 1.5], 16)
    np.testing.assert_allclose(np.diff([s.t for s in tr.samples]), 1.5 / 15, atol=1e-15)


def test_constant_waypoints_static():
    p = Pose(np.array([0.1, 0.2, 0.3]), rot([0, 0, 1], 30))
    tr = fit_and_sample(PosePath([p, p, p]), [0.0, 1.0, 2.0], 10)
    for s in tr.samples:
        for v in (s.v, s.w, s.v_dot, s.w_dot):
            assert np.max(np.abs(v)) < 1e-12


def test_finite_difference_derivatives(rng):
    """Central differences of position/orientation match analytic v, w, v_dot, w_dot."""
    h = 1e-5
    worst = 0.0
    for _ in range(10):
        path = random_path(rng, 4)
        t = np.cumsum(np.r_[0.0, rng.uniform(0.5, 1.0, 3)])
        tr = fit_and_sample(path, t, 16)
        for s in tr.samples[1:-1]:
            a, b = tr.evaluate(s.t - h), tr.evaluate(s.t + h)
            v_fd = (b.pose.p - a.pose.p) / (2 * h)
            a_fd = (b.v - a.v) / (2 * h)
            # angular velocity from the rotation increment
            w_fd = Rotation.from_matrix(b.pose.R @ a.pose.R.T).as_rotvec() / (2 * h)
            wd_fd = (b.w - a.w) / (2 * h)
            for an, fd in ((s.v, v_fd), (s.v_dot, a_fd), (s.w, w_fd), (s.w_dot, wd_fd)):
                worst = max(worst, np.max(np.abs(an - fd)) / max(1.0, np.max(np.abs(an))))
    assert worst < 1e-6


def test_quaternion_norm_sanity(rng):
    path = random_path(rng, 5)
    tr = fit_and_sample(path, np.arange(5.0), 16)
    for s in tr.samples:
        assert abs(np.linalg.norm(s.quat) - 1) < 1e-12
        assert s.norm_deviation < 0.05


def test_large_rotation_rejected():
    path = PosePath([Pose(), Pose(np.zeros(3), rot([0, 0, 1], 170))])
    with pytest.raises(ValueError, match="unit norm"):
        fit_and_sample(path, [0.0, 1.0], 16)


@pytest.mark.parametrize("t", [[0.1, 1.0], [0.0, 0.0], [0.0, 1.0, 0.9]])
def test_bad_timestamps(t):
    with pytest.raises(ValueError):
        fit_and_sample(line_path(len(t)), t, 4)


def test_check_timestamps_slack():
    check_timestamps(np.array([0.0, 0.2 - 5e-13, 1.0]), 0.2, 1.0)
    with pytest.raises(ValueError):
        check_timestamps(np.array([0.0, 0.19, 1.0]), 0.2, 1.0)
    with pytest.raises(ValueError):
        check_timestamps(np.array([0.0, 0.5, 1.0 + 1e-9]), 0.2, 1.0)


def test_external_only_at_last_sample():
    w = np.arange(6.0)
    assert external_at(0, 4, w) == (None, None)
    f, tau = external_at(3, 4, w)
    np.testing.assert_array_equal(f, [0, 1, 2])
    np.testing.assert_array_equal(tau, [3, 4, 5])


def effort_time_cost(lam):
    """Sum of squared sampled accelerations plus lam * duration; unique
    interior optimum for a rest-to-rest move."""
    def cost(tr):
        return float(sum(s.v_dot @ s.v_dot for s in tr.samples)) + lam * tr.T
    return cost


@pytest.mark.parametrize("lam,T_max", [(1e-3, 3.0), (1e-2, 2.0), (1e-5, 5.0), (10.0, 4.0)])
def test_n2_matches_grid_search(lam, T_max):
    path = line_path(2, 0.2)
    dt_min, M = 0.2, 16
    cost = effort_time_cost(lam)
    res = optimize_timestamps(path, M, dt_min, T_max, cost)
    grid = np.arange(dt_min, T_max + 1e-12, 1e-3)
    zs = [cost(fit_and_sample(path, [0.0, g], M)) for g in grid]
    t_grid = grid[int(np.argmin(zs))]
    assert abs(res.trajectory.T - t_grid) <= 1e-3
    assert res.cost <= min(zs) + 1e-12 * max(1.0, min(zs))


def test_fully_constrained_unchanged():
    path = line_path(5)
    calls = []
    res = optimize_timestamps(path, 8, 0.25, 1.0, lambda tr: calls.append(1) or 1.0)
    np.testing.assert_allclose(res.trajectory.timestamps, [0, 0.25, 0.5, 0.75, 1.0])
    assert len(calls) == 1


def test_infeasible_constraints():
    with pytest.raises(ValueError):
        optimize_timestamps(line_path(4), 8, 0.5, 1.0, lambda tr: 0.0)


def test_minimal_at_initial_guess_kept():
    # cost grows as T shrinks: uniform spacing at T_max is optimal
    res = optimize_timestamps(line_path(3), 8, 0.2, 2.0, lambda tr: 1.0 / tr.T)
    np.testing.assert_allclose(res.trajectory.timestamps, [0, 1, 2])
    assert res.cost == res.initial_cost


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_monotone_and_feasible(seed, N):
    rng = np.random.default_rng(seed)
    path = random_path(rng, N)
    w = rng.uniform(0, 1, 3)

    def cost(tr):
        return float(sum(w[0] * s.v_dot @ s.v_dot + w[1] * s.w_dot @ s.w_dot for s in tr.samples)) + w[2] * tr.T

    res = optimize_timestamps(path, 8, 0.2, 3.0, cost, max_evals=40)
    assert res.cost <= res.initial_cost
    check_timestamps(res.trajectory.timestamps, 0.2, 3.0, slack=1e-12)


def test_trajectory_cost_singleton_and_selection(bar, hand, grasps):
    from inhand.evaluate import GraspEvaluator, PlanningContext
    from inhand.model import Grasp
    ev = GraspEvaluator(PlanningContext(hand, bar))
    tr = fit_and_sample(PosePath([Pose(np.array([0, 0, 0.05])), Pose(np.array([0, 0, 0.06]))]), [0, 1.0], 4)
    TI = Grasp.of([grasps["T"], grasps["I"]])
    TIM = Grasp.of([grasps["T"], grasps["I"], grasps["M"]])
    z1, best1, c1 = trajectory_cost(tr, ev, [TI])
    assert best1 == [0] * 4
    z2, best2, c2 = trajectory_cost(tr, ev, [TI, TIM])
    # brute-force per-sample minimum
    for m, s in enumerate(tr.samples):
        per = []
        for g in (TI, TIM):
            e = ev.evaluate(s, g)
            per.append(e.d_star + 1.0 * e.e_star + 1e-3 * e.f_star)
        assert c2[m] == min(per) and best2[m] == int(np.argmin(per))
    assert z2 == pytest.approx(float(np.sum(c2)))
    assert z2 <= z1


def test_sixteen_sample_runtime_lift():
    """Full timestamp optimization on the packaged lift scenario at M=16."""
    from inhand.scenario import Scenario, builtin_config, load_config
    cfg = load_config(builtin_config("lift"))
    sc = Scenario(cfg)
    P = cfg.planning
    mid = Pose(0.5 * (cfg.start.p + cfg.goal.p) + np.array([0.0, 0.0, 0.01]))
    path = PosePath([cfg.start, mid, cfg.goal])
    t0 = time.perf_counter()
    res = optimize_timestamps(path, 16, P.dt_min, P.T_max, make_cost(sc.evaluator, sc.candidates, P.w_e, P.w_f,
                                                                     sc.w_ext), max_evals=200)
    assert time.perf_counter() - t0 < 60.0
    assert res.cost <= res.initial_cost
