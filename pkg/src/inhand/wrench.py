"""Required object wrench, friction pyramids and the contact-force QP.

Force convention: ``f_k`` is the force the finger applies *to the object*.
A finger can only push, so the pyramid axis ``n`` passed to
:func:`friction_pyramid` is the inward surface normal (minus the outward
normal stored on the object's contact candidates).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Grasp, ObjectModel
from .qp import QPError, nnls

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class WrenchTarget:
    f_total: np.ndarray
    tau_total: np.ndarray


@dataclass
class FrictionPyramid:
    normals: np.ndarray  # L x 3 face normals c_l
    generators: np.ndarray  # L x 3 edge rays, each with unit normal component
    mu: float
    n: np.ndarray
    t1: np.ndarray
    t2: np.ndarray

    @property
    def L(self) -> int:
        return len(self.normals)

    def contains(self, f: np.ndarray, slack: float = 1e-9) -> bool:
        return bool(np.all(self.normals @ f <= slack))


@dataclass
class GraspMetrics:
    e_star: float
    f_star: float
    f_hat_total: float
    w_t: float


@dataclass
class ForceSolution:
    forces: np.ndarray  # K x 3, world frame
    metrics: GraspMetrics
    lever_arms: np.ndarray  # K x 3, R_O c_O


def required_wrench(obj: ObjectModel, w: np.ndarray, v_dot: np.ndarray, w_dot: np.ndarray,
                    f_E: np.ndarray, tau_E: np.ndarray, R: np.ndarray | None = None) -> WrenchTarget:
    """Newton-Euler wrench the contacts must supply (world frame).

    ``f_E``/``tau_E`` are the applied external force and torque, gravity
    included in ``f_E``. The body-frame inertia is rotated by ``R``.
    """
    I = obj.inertia if R is None else R @ obj.inertia @ R.T
    w = np.asarray(w, dtype=float)
    f = obj.mass * np.asarray(v_dot, dtype=float) - f_E
    tau = I @ w_dot + np.cross(w, I @ w) - tau_E
    return WrenchTarget(np.asarray(f, dtype=float), np.asarray(tau, dtype=float))


def friction_pyramid(n: np.ndarray, t1: np.ndarray, mu: float, L: int = 12) -> FrictionPyramid:
    """L-sided pyramid with faces ``c_l = [t1 t2 n] (cos th_l, sin th_l, -mu)``,
    ``th_l = 2 pi l / L``, ``t2 = t1 x n``."""
    n = np.asarray(n, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    if abs(np.linalg.norm(n) - 1) > 1e-9 or abs(np.linalg.norm(t1) - 1) > 1e-9:
        raise ValueError("n and t1 must be unit vectors")
    if abs(n @ t1) > 1e-9:
        raise ValueError("t1 must be perpendicular to n")
    if mu <= 0 or L < 3:
        raise ValueError("need mu > 0 and L >= 3")
    t2 = np.cross(t1, n)
    th = 2 * np.pi * np.arange(1, L + 1) / L
    normals = np.outer(np.cos(th), t1) + np.outer(np.sin(th), t2) - mu * n
    # edge between faces l and l+1 lies at the mid angle, scaled to touch both faces
    phi = th + np.pi / L
    r = mu / np.cos(np.pi / L)
    gens = n + r * (np.outer(np.cos(phi), t1) + np.outer(np.sin(phi), t2))
    return FrictionPyramid(normals, gens, float(mu), n, t1, t2)


def contact_geometry(grasp: Grasp, obj: ObjectModel, R_O: np.ndarray):
    """Per-contact lever arm ``R_O c_O``, inward normal and tangent, world frame."""
    levers, normals, tangents = [], [], []
    for c in grasp:
        cand = obj.contacts[c.obj_point]
        levers.append(R_O @ c.c_O)
        normals.append(-(R_O @ cand.normal))
        tangents.append(R_O @ cand.tangent)
    return np.array(levers).reshape(-1, 3), np.array(normals).reshape(-1, 3), np.array(tangents).reshape(-1, 3)


def wrench_matrix(levers: np.ndarray, w_t: float) -> np.ndarray:
    """6 x 3K map from stacked forces to ``[sum f; sqrt(w_t) sum p x f]``."""
    K = len(levers)
    A = np.zeros((6, 3 * K))
    s = np.sqrt(w_t)
    for k, p in enumerate(levers):
        A[:3, 3 * k:3 * k + 3] = np.eye(3)
        A[3:, 3 * k:3 * k + 3] = s * np.array([[0, -p[2], p[1]], [p[2], 0, -p[0]], [-p[1], p[0], 0]])
    return A


def force_objective(forces: np.ndarray, levers: np.ndarray, target: WrenchTarget, w_t: float) -> float:
    """``Z_f = ||f_hat - sum f||^2 + w_t ||tau_hat - sum p x f||^2``."""
    forces = np.asarray(forces).reshape(-1, 3)
    ef = target.f_total - forces.sum(axis=0)
    et = target.tau_total - np.cross(levers, forces).sum(axis=0)
    return float(ef @ ef + w_t * (et @ et))


def slide_generator(n: np.ndarray, direction: np.ndarray, mu: float) -> np.ndarray:
    """Cone-edge ray ``n + mu d`` with ``d`` the unit tangential part of ``direction``."""
    d = direction - (direction @ n) * n
    nd = np.linalg.norm(d)
    if nd < 1e-12:
        raise ValueError("sliding direction has no tangential component")
    return n + mu * d / nd


def optimize_contact_forces(grasp: Grasp, obj: ObjectModel, R_O: np.ndarray, target: WrenchTarget,
                            w_t: float = 1.0, mu: float = 1.0, L: int = 12,
                            pyramids: Sequence[FrictionPyramid] | None = None) -> ForceSolution:
    """Minimize ``Z_f`` over contact forces inside their friction pyramids.

    Sticking contacts: each force is a non-negative combination of its
    pyramid's edge rays. Sliding contacts (``slide_dir`` set): a single ray
    on the friction cone edge whose tangential part points along the desired
    finger motion. The resulting non-negative least-squares problem is solved
    twice: once for the residual ``e*``, then for the minimum-norm forces that
    reproduce the same wrench.
    """
    if len(grasp) == 0:
        raise ValueError("force optimization needs a non-empty grasp")
    levers, normals, tangents = contact_geometry(grasp, obj, R_O)
    if pyramids is None:
        pyramids = [friction_pyramid(n, t, mu, L) for n, t in zip(normals, tangents)]
    K = len(grasp)
    cols, owner = [], []
    for k, c in enumerate(grasp):
        if c.sliding:
            gens = slide_generator(normals[k], R_O @ c.slide_dir, pyramids[k].mu)[None, :]
        else:
            gens = pyramids[k].generators
        for g in gens:
            col = np.zeros(3 * K)
            col[3 * k:3 * k + 3] = g
            cols.append(col)
            owner.append(k)
    Gm = np.array(cols).T  # 3K x n_gen
    A = wrench_matrix(levers, w_t)
    b = np.concatenate([target.f_total, np.sqrt(w_t) * target.tau_total])
    AG = A @ Gm
    try:
        first = nnls(AG, b)
        lam = first.x
        achieved = AG @ lam
        # minimum-norm forces producing the same (unique) closest wrench
        s = 1e6 / max(1.0, float(np.abs(AG).max()))
        second = nnls(np.vstack([s * AG, Gm]), np.concatenate([s * achieved, np.zeros(3 * K)]))
    except QPError as exc:
        raise QPError(f"contact force QP failed: {exc}", A=AG, b=b, grasp=grasp) from exc
    f1 = (Gm @ lam).reshape(K, 3)
    f2 = (Gm @ second.x).reshape(K, 3)
    z1 = force_objective(f1, levers, target, w_t)
    z2 = force_objective(f2, levers, target, w_t)
    forces = f2 if z2 <= z1 + 1e-10 * max(1.0, z1) else f1
    e_star = force_objective(forces, levers, target, w_t)
    metrics = GraspMetrics(e_star=e_star, f_star=float(np.sum(forces ** 2)),
                           f_hat_total=f_hat_total(target, w_t), w_t=w_t)
    return ForceSolution(forces, metrics, levers)


def f_hat_total(target: WrenchTarget, w_t: float) -> float:
    return float(target.f_total @ target.f_total + w_t * (target.tau_total @ target.tau_total))


def sample_target(obj: ObjectModel, sample, f_ext=None, tau_ext=None, gravity: np.ndarray = GRAVITY) -> WrenchTarget:
    """Required wrench at a trajectory sample, with gravity and an optional external wrench."""
    f_E = obj.mass * gravity + (np.zeros(3) if f_ext is None else np.asarray(f_ext, dtype=float))
    tau_E = np.zeros(3) if tau_ext is None else np.asarray(tau_ext, dtype=float)
    return required_wrench(obj, sample.w, sample.v_dot, sample.w_dot, f_E, tau_E, sample.pose.R)


def grasp_metrics(sample, grasp: Grasp, obj: ObjectModel, f_ext=None, tau_ext=None, w_t: float = 1.0,
                  mu: float = 1.0, L: int = 12, gravity: np.ndarray = GRAVITY) -> ForceSolution:
    """Contact forces and metrics for ``grasp`` using the pose, velocity and
    acceleration of one trajectory sample."""
    target = sample_target(obj, sample, f_ext, tau_ext, gravity)
    return optimize_contact_forces(grasp, obj, sample.pose.R, target, w_t, mu, L)
