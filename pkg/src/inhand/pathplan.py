"""Lazy PRM* object path planning in pose space."""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .evaluate import GraspEvaluator
from .geometry import Pose, pose_distance, quat_angle, quat_to_matrix, slerp
from .model import Grasp, object_collides, palm_world
from .traj import PosePath

log = logging.getLogger(__name__)

Validity = Callable[[Pose], tuple[bool, int | None]]


class PathPlanningError(RuntimeError):
    def __init__(self, kind: str, message: str = ""):
        super().__init__(f"{kind}: {message}" if message else kind)
        self.kind = kind


@dataclass
class PlannerParams:
    samples: int = 300
    radius_scale: float = 1.0
    seed: int = 0
    d_threshold: float = 1e-6  # m^2
    margin: float = 0.05  # sampling box inflation (m)
    rot_weight: float = 0.1  # m/rad
    check_step: float = 0.005  # m
    check_angle: float = np.deg2rad(5.0)
    max_segment_angle: float = np.deg2rad(45.0)
    shortcut: bool = True


def is_valid_pose(pose: Pose, evaluator: GraspEvaluator, candidates: Sequence[Grasp],
                  d_threshold: float = 1e-6) -> tuple[bool, int | None]:
    """No object/environment or object/palm penetration and some candidate
    grasp reaches the pose with d* below ``d_threshold``.

    Returns the validity flag and the first witnessing grasp index.
    """
    if not candidates:
        raise ValueError("no grasp candidates")
    ctx = evaluator.ctx
    if object_collides(ctx.obj, pose, ctx.env, palm_world(ctx.hand)):
        return False, None
    w = evaluator.valid_grasp(pose, candidates, d_threshold)
    return w is not None, w


def interpolate(a: Pose, b: Pose, s: float) -> Pose:
    qa, qb = a.quat, b.quat
    return Pose((1 - s) * a.p + s * b.p, quat_to_matrix(slerp(qa, qb, s)))


def segment_steps(a: Pose, b: Pose, step: float, angle_step: float) -> int:
    dp = float(np.linalg.norm(b.p - a.p))
    da = quat_angle(a.quat, b.quat)
    return max(1, math.ceil(dp / step - 1e-12), math.ceil(da / angle_step - 1e-12))


def random_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 3] < 0] *= -1
    return q


class _Roadmap:
    """Incremental roadmap: node ``i`` connects to earlier nodes within
    ``r(i)``, so a larger budget on the same seed only adds nodes and edges."""

    def __init__(self, nodes: list[Pose], params: PlannerParams, gamma: float):
        self.nodes = nodes
        self.params = params
        self.adj: list[dict[int, float]] = [dict() for _ in nodes]
        d = 6.0
        P = np.array([x.p for x in nodes])
        Q = np.array([x.quat for x in nodes])
        for i in range(1, len(nodes)):
            n = i + 1
            r = gamma * (math.log(n + 1) / n) ** (1.0 / d)
            dots = np.clip(np.abs(Q[:i] @ Q[i]), 0.0, 1.0)
            dist = np.linalg.norm(P[:i] - P[i], axis=1) + params.rot_weight * 2.0 * np.arccos(dots)
            for j in np.flatnonzero(dist <= r):
                self.adj[i][int(j)] = float(dist[j])
                self.adj[int(j)][i] = float(dist[j])

    def drop_edge(self, i: int, j: int):
        self.adj[i].pop(j, None)
        self.adj[j].pop(i, None)

    def drop_node(self, i: int):
        for j in list(self.adj[i]):
            self.drop_edge(i, j)

    def shortest(self, src: int, dst: int):
        dist = {src: 0.0}
        prev: dict[int, int] = {}
        heap = [(0.0, src)]
        done = set()
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            if u == dst:
                path = [u]
                while path[-1] != src:
                    path.append(prev[path[-1]])
                return d, path[::-1]
            for v, w in sorted(self.adj[u].items()):
                nd = d + w
                if nd < dist.get(v, np.inf) - 1e-15:
                    dist[v] = nd
                    prev[v] = u
                    heapq.heappush(heap, (nd, v))
        return np.inf, None


class PathPlanner:
    def __init__(self, validity: Validity, params: PlannerParams | None = None):
        self.validity = validity
        self.params = params or PlannerParams()
        self._node_cache: dict = {}
        self.search_cost = np.inf

    def _valid(self, pose: Pose) -> tuple[bool, int | None]:
        key = tuple(np.round(np.concatenate([pose.p, pose.R.ravel()]), 12))
        if key not in self._node_cache:
            self._node_cache[key] = self.validity(pose)
        return self._node_cache[key]

    def segment_valid(self, a: Pose, b: Pose) -> bool:
        p = self.params
        n = segment_steps(a, b, p.check_step, p.check_angle)
        return all(self._valid(interpolate(a, b, k / n))[0] for k in range(1, n))

    def _samples(self, start: Pose, goal: Pose, n: int) -> list[Pose]:
        p = self.params
        # separate streams: a larger budget extends the same sample sequence
        rng_p = np.random.default_rng([p.seed, 0])
        rng_q = np.random.default_rng([p.seed, 1])
        lo = np.minimum(start.p, goal.p) - p.margin
        hi = np.maximum(start.p, goal.p) + p.margin
        pos = rng_p.uniform(lo, hi, size=(n, 3))
        quats = random_quaternions(rng_q, n)
        return [Pose(x, quat_to_matrix(q)) for x, q in zip(pos, quats)]

    def plan(self, start: Pose, goal: Pose) -> PosePath:
        p = self.params
        ok_s, w_s = self._valid(start)
        if not ok_s:
            raise PathPlanningError("start invalid", "no valid grasp or collision at the start pose")
        ok_g, w_g = self._valid(goal)
        if not ok_g:
            raise PathPlanningError("goal invalid", "no valid grasp or collision at the goal pose")
        if pose_distance(start, goal, p.rot_weight) < 1e-12:
            self.search_cost = 0.0
            return PosePath([start.copy(), goal.copy()], [w_s, w_g])
        if self.segment_valid(start, goal):
            # straight segment is the metric's global optimum
            self.search_cost = pose_distance(start, goal, p.rot_weight)
            return self._finish([start, goal])

        nodes = [start, goal] + self._samples(start, goal, p.samples)
        lo = np.minimum(start.p, goal.p) - p.margin
        hi = np.maximum(start.p, goal.p) + p.margin
        # PRM* constant 2 (1 + 1/d)^(1/d) (mu(X) / zeta_d)^(1/d), d = 6; the
        # rotation part of mu(X) is the volume of SO(3) under the weighted angle metric
        vol = float(np.prod(hi - lo)) * (p.rot_weight ** 3) * np.pi ** 2
        gamma = p.radius_scale * 2.0 * (7.0 / 6.0) ** (1 / 6) * (vol / (np.pi ** 3 / 6)) ** (1 / 6)
        rm = _Roadmap(nodes, p, gamma)
        node_ok: dict[int, bool] = {0: True, 1: True}
        edge_ok: dict[tuple[int, int], bool] = {}
        while True:
            cost, path = rm.shortest(0, 1)
            if path is None:
                raise PathPlanningError("disconnected", f"no path through {p.samples} samples")
            bad = False
            for i in path:
                if i not in node_ok:
                    node_ok[i] = self._valid(nodes[i])[0]
                if not node_ok[i]:
                    rm.drop_node(i)
                    bad = True
            if bad:
                continue
            for i, j in zip(path, path[1:]):
                e = (min(i, j), max(i, j))
                if e not in edge_ok:
                    edge_ok[e] = self.segment_valid(nodes[i], nodes[j])
                if not edge_ok[e]:
                    rm.drop_edge(i, j)
                    bad = True
                    break
            if not bad:
                break
        self.search_cost = cost
        log.info("roadmap path through %d nodes, length %.4f", len(path), cost)
        wps = [nodes[i] for i in path]
        if p.shortcut:
            wps = self.shortcut(wps)
        return self._finish(wps)

    def shortcut(self, wps: list[Pose]) -> list[Pose]:
        """Greedy: from each kept waypoint jump to the farthest directly reachable one."""
        out = [wps[0]]
        i = 0
        while i < len(wps) - 1:
            j = len(wps) - 1
            while j > i + 1 and not self.segment_valid(wps[i], wps[j]):
                j -= 1
            out.append(wps[j])
            i = j
        return out

    def _finish(self, wps: list[Pose]) -> PosePath:
        """Subdivide large rotations (keeps the quaternion spline near unit norm)
        and attach witness grasps."""
        p = self.params
        out = [wps[0]]
        for a, b in zip(wps, wps[1:]):
            n = max(1, math.ceil(quat_angle(a.quat, b.quat) / p.max_segment_angle - 1e-12))
            out.extend(interpolate(a, b, k / n) for k in range(1, n + 1))
        return PosePath([w.copy() for w in out], [self._valid(w)[1] for w in out])


def plan_path(start: Pose, goal: Pose, validity: Validity, params: PlannerParams | None = None) -> PosePath:
    """Shortest valid object path from ``start`` to ``goal``.

    ``validity(pose)`` returns ``(ok, witness grasp index)``. Raises
    :class:`PathPlanningError` with ``kind`` ``"start invalid"``,
    ``"goal invalid"`` or ``"disconnected"``.
    """
    return PathPlanner(validity, params).plan(start, goal)


def path_length(path: PosePath, rot_weight: float = 0.1) -> float:
    return path.length(rot_weight)


def grasp_validity(evaluator: GraspEvaluator, candidates: Sequence[Grasp], d_threshold: float = 1e-6) -> Validity:
    return lambda pose: is_valid_pose(pose, evaluator, candidates, d_threshold)
