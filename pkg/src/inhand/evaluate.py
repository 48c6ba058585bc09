"""Per-(sample, grasp) evaluation shared by the path, trajectory and grasp-sequence planners."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .collision import Primitive, Sphere, penetrates
from .geometry import Pose
from .ik import IkParams, IkResult, max_ik_error, solve_ik
from .model import Grasp, HandModel, ObjectModel, forward_kinematics, hand_self_collision
from .wrench import GRAVITY, ForceSolution, grasp_metrics


@dataclass
class PlanningContext:
    hand: HandModel
    obj: ObjectModel
    env: list[Primitive] = field(default_factory=list)
    ik: IkParams = field(default_factory=IkParams)
    mu: float = 1.0
    L: int = 12
    w_t: float = 1.0
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    q0: np.ndarray | None = None
    # clearance kept by contact approach via points (sphere of this radius)
    approach_radius: float = 0.005
    approach_clearance: float = 0.02

    @property
    def q_start(self) -> np.ndarray:
        return self.hand.home if self.q0 is None else self.q0


@dataclass
class GraspEval:
    ik: IkResult
    d_star: float
    dp_max: float
    collision: bool
    forces: ForceSolution | None = None

    @property
    def e_star(self) -> float:
        return self.forces.metrics.e_star

    @property
    def f_star(self) -> float:
        return self.forces.metrics.f_star

    @property
    def f_hat_total(self) -> float:
        return self.forces.metrics.f_hat_total


def _pose_key(pose: Pose) -> tuple:
    return tuple(np.round(np.concatenate([pose.p, pose.R.ravel()]), 12))


class GraspEvaluator:
    """Caches IK per (pose, grasp); force metrics are recomputed per sample."""

    def __init__(self, ctx: PlanningContext):
        self.ctx = ctx
        self._ik: dict = {}
        self._coll: dict = {}

    def ik(self, pose: Pose, grasp: Grasp) -> IkResult:
        key = (_pose_key(pose), grasp)
        res = self._ik.get(key)
        if res is None:
            c = self.ctx
            res = solve_ik(c.hand, c.q_start, pose, grasp, c.env, c.ik)
            self._ik[key] = res
        return res

    def collision(self, pose: Pose, grasp: Grasp) -> bool:
        """Environment contact during IK, finger-finger penetration at the IK
        solution, or a contact approach corridor reaching into the environment."""
        key = (_pose_key(pose), grasp)
        hit = self._coll.get(key)
        if hit is None:
            c = self.ctx
            res = self.ik(pose, grasp)
            hit = res.collided or hand_self_collision(c.hand, forward_kinematics(c.hand, res.q_star))
            if not hit and c.env:
                for ci in grasp:
                    cand = c.obj.contacts[ci.obj_point]
                    for a in cand.approach_points(c.approach_clearance):
                        s = Sphere(pose.transform(a), c.approach_radius)
                        if any(penetrates(s, e) for e in c.env):
                            hit = True
            self._coll[key] = hit
        return hit

    def kinematics(self, pose: Pose, grasp: Grasp) -> GraspEval:
        res = self.ik(pose, grasp)
        return GraspEval(res, res.d_star, max_ik_error(res), self.collision(pose, grasp))

    def evaluate(self, sample, grasp: Grasp, f_ext=None, tau_ext=None) -> GraspEval:
        ev = self.kinematics(sample.pose, grasp)
        c = self.ctx
        ev.forces = grasp_metrics(sample, grasp, c.obj, f_ext, tau_ext, c.w_t, c.mu, c.L, c.gravity)
        return ev

    def valid_grasp(self, pose: Pose, candidates: Sequence[Grasp], d_threshold: float) -> int | None:
        """Index of the first candidate reaching ``pose`` with d* below threshold, collision free."""
        for i, g in enumerate(candidates):
            res = self.ik(pose, g)
            if res.d_star < d_threshold and not self.collision(pose, g):
                return i
        return None
