"""Timestamp optimization and cubic B-spline object trajectories."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.optimize import minimize

from .evaluate import GraspEvaluator
from .geometry import Pose, quat_conj, quat_mul, quat_to_matrix
from .model import Grasp

log = logging.getLogger(__name__)

NORM_DEVIATION_LIMIT = 0.05


@dataclass
class PosePath:
    waypoints: list[Pose]
    witnesses: list[int | None] = field(default_factory=list)

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("a path needs at least two waypoints")
        if not self.witnesses:
            self.witnesses = [None] * len(self.waypoints)

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def quats(self) -> np.ndarray:
        """Waypoint quaternions with signs aligned along the path."""
        qs = np.array([w.quat for w in self.waypoints])
        for i in range(1, len(qs)):
            if qs[i - 1] @ qs[i] < 0:
                qs[i] = -qs[i]
        return qs

    def length(self, rot_weight: float = 0.1) -> float:
        from .geometry import pose_distance
        return sum(pose_distance(a, b, rot_weight) for a, b in zip(self.waypoints, self.waypoints[1:]))


@dataclass
class TrajectorySample:
    t: float
    pose: Pose
    v: np.ndarray
    w: np.ndarray
    v_dot: np.ndarray
    w_dot: np.ndarray
    quat: np.ndarray | None = None
    norm_deviation: float = 0.0


def _normalized_quat_derivatives(u, ud, udd):
    """Unit quaternion ``u/|u|`` and its first two time derivatives."""
    r = np.linalg.norm(u)
    a = u @ ud
    q = u / r
    qd = ud / r - u * a / r ** 3
    qdd = (udd / r - 2 * ud * a / r ** 3 - u * (ud @ ud + u @ udd) / r ** 3 + 3 * u * a * a / r ** 5)
    return q, qd, qdd


@dataclass
class ObjectTrajectory:
    timestamps: np.ndarray
    spline: object  # scipy BSpline over 7 components (p, quat xyzw)
    M: int
    samples: list[TrajectorySample] = field(default_factory=list)

    @property
    def T(self) -> float:
        return float(self.timestamps[-1])

    @property
    def sample_times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.M)

    def evaluate(self, t: float) -> TrajectorySample:
        t = float(np.clip(t, 0.0, self.T))
        y = self.spline(t)
        yd = self.spline(t, 1)
        ydd = self.spline(t, 2)
        q, qd, qdd = _normalized_quat_derivatives(y[3:], yd[3:], ydd[3:])
        w = 2.0 * quat_mul(qd, quat_conj(q))[:3]
        w_dot = 2.0 * quat_mul(qdd, quat_conj(q))[:3]
        return TrajectorySample(t, Pose(y[:3], quat_to_matrix(q)), yd[:3].copy(), w, ydd[:3].copy(), w_dot,
                                quat=q, norm_deviation=abs(float(np.linalg.norm(y[3:])) - 1.0))

    def table(self, grasp_ids: Sequence[int] | None = None) -> np.ndarray:
        """Rows ``t, p(3), quat(4), v(3), w(3), v_dot(3), w_dot(3), grasp id``."""
        rows = []
        for m, s in enumerate(self.samples):
            gid = -1 if grasp_ids is None else grasp_ids[m]
            rows.append(np.concatenate([[s.t], s.pose.p, s.quat, s.v, s.w, s.v_dot, s.w_dot, [gid]]))
        return np.array(rows)


def check_timestamps(t: np.ndarray, dt_min: float = 0.0, T_max: float = np.inf, slack: float = 1e-12):
    t = np.asarray(t, dtype=float)
    if t[0] != 0.0:
        raise ValueError("first timestamp must be 0")
    gaps = np.diff(t)
    if np.any(gaps <= 0) or np.any(gaps < dt_min - slack):
        raise ValueError(f"timestamps violate the minimum interval {dt_min}: {t}")
    if t[-1] > T_max + slack:
        raise ValueError(f"completion time {t[-1]} exceeds T_max={T_max}")


def fit_and_sample(path: PosePath, timestamps, M: int) -> ObjectTrajectory:
    """Clamped cubic B-splines through the waypoints (7 components: position
    and scalar-last quaternion), sampled at ``M`` uniform times."""
    if M < 2:
        raise ValueError("M must be > 1")
    t = np.asarray(timestamps, dtype=float)
    if len(t) != len(path):
        raise ValueError("one timestamp per waypoint required")
    check_timestamps(t)
    qs = np.array([w.quat for w in path.waypoints])
    qs = path.quats
    if np.any(np.sum(qs[1:] * qs[:-1], axis=1) < 0):
        raise ValueError("waypoint quaternions are not sign-aligned")
    Y = np.hstack([np.array([w.p for w in path.waypoints]), qs])
    spline = make_interp_spline(t, Y, k=3, bc_type="clamped")
    traj = ObjectTrajectory(t, spline, M)
    traj.samples = [traj.evaluate(tm) for tm in traj.sample_times]
    dev = max(s.norm_deviation for s in traj.samples)
    if dev >= NORM_DEVIATION_LIMIT:
        raise ValueError(f"quaternion interpolation deviates from unit norm by {dev:.3f}")
    return traj


def external_at(m: int, M: int, w_ext) -> tuple[np.ndarray | None, np.ndarray | None]:
    """External wrench acting at sample ``m`` (0-based): only at the last sample."""
    if w_ext is None or m != M - 1:
        return None, None
    w = np.asarray(w_ext, dtype=float)
    return w[:3], w[3:]


def trajectory_cost(traj: ObjectTrajectory, evaluator: GraspEvaluator, candidates: Sequence[Grasp],
                    w_e: float = 1.0, w_f: float = 1e-3, w_ext=None):
    """``Z_1 = sum_m min_G d* + w_e e* + w_f f*``.

    Returns ``(Z_1, best grasp index per sample, per-sample minimum cost)``;
    ties go to the lower candidate index.
    """
    if not candidates:
        raise ValueError("no grasp candidates")
    best, costs = [], []
    for m, s in enumerate(traj.samples):
        f_ext, tau_ext = external_at(m, traj.M, w_ext)
        cm = []
        for g in candidates:
            ev = evaluator.evaluate(s, g, f_ext, tau_ext)
            cm.append(ev.d_star + w_e * ev.e_star + w_f * ev.f_star)
        i = int(np.argmin(cm))
        best.append(i)
        costs.append(cm[i])
    return float(np.sum(costs)), best, np.array(costs)


def uniform_timestamps(N: int, T: float) -> np.ndarray:
    return np.linspace(0.0, T, N)


def _repair(t: np.ndarray, dt_min: float, T_max: float) -> np.ndarray:
    t = t.copy()
    t[0] = 0.0
    for i in range(1, len(t)):
        t[i] = max(t[i], t[i - 1] + dt_min)
    if t[-1] > T_max:
        # pull back from the end, keeping the minimum interval
        t[-1] = T_max
        for i in range(len(t) - 2, 0, -1):
            t[i] = min(t[i], t[i + 1] - dt_min)
    return t


@dataclass
class TimestampResult:
    trajectory: ObjectTrajectory
    cost: float
    initial_cost: float
    evaluations: int
    best_grasps: list[int]


def optimize_timestamps(path: PosePath, M: int, dt_min: float, T_max: float,
                        cost: Callable[[ObjectTrajectory], float], max_evals: int = 200) -> TimestampResult:
    """COBYLA over ``t_2..t_N`` with ``t_1 = 0``, ``t_i - t_{i-1} >= dt_min``,
    ``t_N <= T_max``, starting from uniform spacing over ``T_max``.

    ``cost`` maps a trajectory to ``Z_1`` (see :func:`make_cost`). The result
    never costs more than the initial guess.
    """
    N = len(path)
    if dt_min <= 0:
        raise ValueError("dt_min must be positive")
    if (N - 1) * dt_min > T_max * (1 + 1e-12):
        raise ValueError(f"(N-1)*dt_min = {(N - 1) * dt_min} exceeds T_max = {T_max}")
    t0 = uniform_timestamps(N, T_max)
    n_eval = 0
    cache: dict = {}

    def Z(t):
        nonlocal n_eval
        key = tuple(np.round(t, 14))
        if key not in cache:
            n_eval += 1
            cache[key] = cost(fit_and_sample(path, t, M))
        return cache[key]

    z0 = Z(t0)
    if (N - 1) * dt_min >= T_max * (1 - 1e-12):
        traj = fit_and_sample(path, t0, M)
        return TimestampResult(traj, z0, z0, n_eval, getattr(cost, "last_best", []))

    # x_i is the amount taken off interval i relative to uniform spacing, so
    # COBYLA's initial +rhobeg steps move inward from the T_max boundary
    g0 = T_max / (N - 1)

    def full(x):
        return np.concatenate([[0.0], np.cumsum(g0 - np.asarray(x))])

    def objective(x):
        try:
            return Z(_repair(full(x), dt_min, T_max))
        except ValueError:
            return np.inf

    cons = [{"type": "ineq", "fun": lambda x: (g0 - dt_min) - np.asarray(x)},  # gap_i >= dt_min
            {"type": "ineq", "fun": lambda x: np.array([np.sum(x)])}]  # t_N <= T_max
    res = minimize(objective, np.zeros(N - 1), method="COBYLA", constraints=cons,
                   options={"maxiter": max_evals, "rhobeg": 0.5 * (g0 - dt_min), "tol": 1e-5})
    t_best = _repair(full(np.asarray(res.x)), dt_min, T_max)
    try:
        z_best = Z(t_best)
    except ValueError:
        z_best = np.inf
    for key, val in cache.items():
        # keep the best feasible point seen, COBYLA's last iterate may be worse
        t_k = np.array(key)
        if val < z_best:
            try:
                check_timestamps(t_k, dt_min, T_max)
            except ValueError:
                continue
            t_best, z_best = t_k, val
    if not z_best <= z0:
        t_best, z_best = t0, z0
    check_timestamps(t_best, dt_min, T_max)
    traj = fit_and_sample(path, t_best, M)
    best_grasps = []
    if hasattr(cost, "best_for"):
        best_grasps = cost.best_for(traj)
    log.info("timestamps %s -> Z1 %.6g (initial %.6g, %d evaluations)", np.round(t_best, 4), z_best, z0, n_eval)
    return TimestampResult(traj, float(z_best), float(z0), n_eval, best_grasps)


class make_cost:
    """Callable ``Z_1`` for :func:`optimize_timestamps` backed by a grasp evaluator."""

    def __init__(self, evaluator: GraspEvaluator, candidates: Sequence[Grasp], w_e: float = 1.0,
                 w_f: float = 1e-3, w_ext=None):
        self.evaluator = evaluator
        self.candidates = list(candidates)
        self.w_e, self.w_f, self.w_ext = w_e, w_f, w_ext

    def __call__(self, traj: ObjectTrajectory) -> float:
        return trajectory_cost(traj, self.evaluator, self.candidates, self.w_e, self.w_f, self.w_ext)[0]

    def best_for(self, traj: ObjectTrajectory) -> list[int]:
        return trajectory_cost(traj, self.evaluator, self.candidates, self.w_e, self.w_f, self.w_ext)[1]
