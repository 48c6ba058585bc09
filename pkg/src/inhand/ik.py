"""Iterative QP inverse kinematics for point contacts."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .collision import Primitive
from .geometry import Pose
from .model import (Grasp, HandModel, ObjectModel, contact_jacobian, contact_point_world,
                    forward_kinematics, hand_env_collision, hand_self_collision)
from .qp import bvls

THRESHOLD = "threshold"
ERROR_INCREASE = "error-increase"
ENV_CONTACT = "environment-contact"
ITERATION_CAP = "iteration-cap"


@dataclass
class IkParams:
    threshold: float = 1e-8  # m^2
    max_iter: int = 100
    k_ik: float = 1.0
    # per-iteration joint step cap (rad), intersected with the limit bounds
    max_step: float | None = 0.5
    env_margin: float = 0.0
    # step halvings tried before an increase in d terminates the iteration
    backtrack: int = 8


@dataclass
class IkResult:
    q_star: np.ndarray
    d_star: float
    errors: np.ndarray  # K x 3 per-contact position errors
    termination: str
    iterations: int = 0
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.termination == THRESHOLD

    @property
    def collided(self) -> bool:
        return self.termination == ENV_CONTACT


def step_bounds(q, q_min, q_max, k_ik: float = 1.0, max_step: float | None = None):
    lo = (np.asarray(q_min) - q) / k_ik
    hi = (np.asarray(q_max) - q) / k_ik
    if max_step is not None:
        lo = np.maximum(lo, -max_step)
        hi = np.minimum(hi, max_step)
    # q outside its limits: keep zero motion feasible
    return np.minimum(lo, 0.0), np.maximum(hi, 0.0)


def ik_step(q: np.ndarray, targets: Sequence[np.ndarray], jacobians: Sequence[np.ndarray], k_ik: float,
            q_min: np.ndarray, q_max: np.ndarray, max_step: float | None = None) -> np.ndarray:
    """Joint displacement minimizing ``sum ||J_k dq - dp_k||^2`` inside the scaled limit box."""
    if k_ik <= 0:
        raise ValueError("k_ik must be positive")
    if len(targets) != len(jacobians):
        raise ValueError("one target per contact Jacobian required")
    q = np.asarray(q, dtype=float)
    if not targets:
        return np.zeros_like(q)
    A = np.vstack(jacobians)
    b = np.concatenate([np.asarray(t, dtype=float) for t in targets])
    lo, hi = step_bounds(q, q_min, q_max, k_ik, max_step)
    return bvls(A, b, lo, hi).x


def contact_errors(hand: HandModel, poses, object_pose: Pose, grasp: Grasp) -> np.ndarray:
    return np.array([object_pose.transform(c.c_O) - contact_point_world(hand, poses, c) for c in grasp]).reshape(-1, 3)


def solve_ik(hand: HandModel, q0: np.ndarray, object_pose: Pose, grasp: Grasp,
             env: Sequence[Primitive] = (), params: IkParams | None = None) -> IkResult:
    """Iterate :func:`ik_step` until the squared error is small, stops improving,
    a link penetrates the environment, or the iteration cap is reached.

    The returned configuration is the best accepted iterate.
    """
    if len(grasp) == 0:
        raise ValueError("IK needs a non-empty grasp")
    p = params or IkParams()
    q = np.array(q0, dtype=float)
    poses = forward_kinematics(hand, q)
    errs = contact_errors(hand, poses, object_pose, grasp)
    d = float(np.sum(errs ** 2))
    hist = [d]

    def result(term, it):
        return IkResult(q.copy(), d, errs, term, it, hist)

    if env and hand_env_collision(hand, poses, env, p.env_margin):
        return result(ENV_CONTACT, 0)
    if d < p.threshold:
        return result(THRESHOLD, 0)
    for it in range(1, p.max_iter + 1):
        Js = [contact_jacobian(hand, q, c, poses) for c in grasp]
        dq = ik_step(q, list(errs), Js, p.k_ik, hand.q_min, hand.q_max, p.max_step)
        for _ in range(p.backtrack + 1):
            q_new = q + dq
            poses_new = forward_kinematics(hand, q_new)
            if env and hand_env_collision(hand, poses_new, env, p.env_margin):
                return result(ENV_CONTACT, it)
            errs_new = contact_errors(hand, poses_new, object_pose, grasp)
            d_new = float(np.sum(errs_new ** 2))
            if d_new < d:
                break
            dq = 0.5 * dq
        hist.append(d_new)
        if d_new >= d:
            return result(ERROR_INCREASE, it)
        q, poses, errs, d = q_new, poses_new, errs_new, d_new
        if d < p.threshold:
            return result(THRESHOLD, it)
    return result(ITERATION_CAP, p.max_iter)


def max_ik_error(result: IkResult) -> float:
    """Largest squared per-contact position error."""
    if len(result.errors) == 0:
        return 0.0
    return float(np.max(np.sum(result.errors ** 2, axis=1)))


def static_feasibility_filter(hand: HandModel, obj: ObjectModel, nominal_pose: Pose,
                              env: Sequence[Primitive] = (), params: IkParams | None = None,
                              q0: np.ndarray | None = None, margin: float = 0.0) -> Callable[[Grasp], bool]:
    """Grasp filter: no link-link or link-environment penetration at the IK
    solution for ``nominal_pose``."""
    q_init = hand.home if q0 is None else q0

    def feasible(grasp: Grasp) -> bool:
        res = solve_ik(hand, q_init, nominal_pose, grasp, env, params)
        if res.collided:
            return False
        poses = forward_kinematics(hand, res.q_star)
        if hand_self_collision(hand, poses, margin):
            return False
        return not (env and hand_env_collision(hand, poses, env, margin))

    return feasible
