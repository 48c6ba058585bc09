"""Desk-scale rigid-body simulation: a free object, PD-controlled finger joints,
penalty point contacts with Coulomb friction, RK4 at a fixed step.

Contact model
-------------
Normal force ``N = max(0, k depth + c depth_rate)``. The tangential force
comes from one of two models:

* ``"spring"`` (default): an elastic-plastic stick spring. Each contact keeps
  an anchor; the tangential force is ``-k_t s - c_t v_t`` for the anchor
  displacement ``s``, clipped to ``mu N``. After every step the anchor is
  dragged so the spring never stretches beyond the friction limit. Anchors
  stay frozen inside the RK4 stages.
* ``"regularized"``: ``-mu N v_t / sqrt(|v_t|^2 + v_reg^2)``.

Fingers touch the object only through their link contact points; the object
touches the floor through its primitives' corner/cap points. Joints are a
diagonal armature driven by ``K_P (q_ref - q) - K_D qdot`` plus the contact
torques; gravity on the fingers is assumed perfectly compensated.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .collision import Capsule, Sphere, lowest_points, point_signed_distance
from .geometry import Pose, quat_mul, quat_normalize, quat_to_matrix
from .model import HandModel, ObjectModel

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


@dataclass
class SimParams:
    dt: float = 1e-3
    mu: float = 1.0
    gravity: float = 9.81
    k_contact: float = 5e4  # N/m
    c_contact: float = 50.0  # N s/m
    friction: str = "spring"
    k_tangent: float = 5e4  # N/m
    c_tangent: float = 20.0  # N s/m
    v_reg: float = 1e-3  # m/s, regularized model only
    joint_kp: float = 20.0  # N m/rad
    joint_kd: float = 0.4  # N m s/rad
    armature: float = 2e-3  # kg m^2
    floor: bool = True
    max_speed: float = 50.0  # divergence guard, m/s and rad/s

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.k_contact > 0:
            raise ValueError("contact stiffness must be positive")
        if self.friction not in ("spring", "regularized"):
            raise ValueError(f"unknown friction model {self.friction!r}")


@dataclass
class ContactRecord:
    key: tuple
    link: int | None  # None for object/floor contacts
    point: np.ndarray  # world
    normal: np.ndarray  # unit, direction of the normal force on the object
    depth: float
    force: np.ndarray  # force on the object, world frame

    @property
    def normal_force(self) -> float:
        return float(self.force @ self.normal)

    @property
    def tangential_force(self) -> float:
        return float(np.linalg.norm(self.force - self.normal_force * self.normal))


@dataclass
class SimState:
    t: float
    p: np.ndarray
    quat: np.ndarray
    v: np.ndarray
    w: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    anchors: dict = field(default_factory=dict)
    contacts: list[ContactRecord] = field(default_factory=list)

    @property
    def pose(self) -> Pose:
        return Pose(self.p.copy(), quat_to_matrix(self.quat))

    def copy(self) -> "SimState":
        return SimState(self.t, self.p.copy(), self.quat.copy(), self.v.copy(), self.w.copy(), self.q.copy(),
                        self.qd.copy(), {k: v.copy() for k, v in self.anchors.items()}, list(self.contacts))

    def as_dict(self) -> dict:
        return {"t": self.t, "p": self.p.tolist(), "quat": self.quat.tolist(), "v": self.v.tolist(),
                "w": self.w.tolist(), "q": self.q.tolist(), "qd": self.qd.tolist()}


@dataclass
class LinkSensor:
    force: np.ndarray  # force the link applies to the object, world frame
    cop: np.ndarray  # center of pressure, world frame


def _axis_rot(axis, a):
    x, y, z = axis
    c, s = np.cos(a), np.sin(a)
    C = 1 - c
    return np.array([[c + x * x * C, x * y * C - z * s, x * z * C + y * s],
                     [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
                     [z * x * C - y * s, z * y * C + x * s, c + z * z * C]])


def _cross(a, b):
    # np.cross is slow for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _cross_rows(a, b):
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


class _Kin:
    """Flattened hand kinematics for the inner loop."""

    def __init__(self, hand: HandModel):
        self.n = hand.n_joints
        self.chains = []
        k = 0
        for f in hand.fingers:
            T = hand.base @ f.base
            joints = [(j.origin.p.copy(), j.origin.R.copy(), np.asarray(j.axis, dtype=float) / np.linalg.norm(j.axis))
                      for j in f.joints]
            self.chains.append((T.p.copy(), T.R.copy(), joints, k))
            k += len(f.joints)
        self.points = []  # (link index, point index, local point)
        for li, lk in enumerate(hand.links):
            for pi, c in enumerate(lk.contact_points):
                self.points.append((li, pi, np.asarray(c, dtype=float)))

    def frames(self, q):
        """World joint positions, joint axes and link frames."""
        pos, axes, Rs = [], [], []
        for p0, R0, joints, k in self.chains:
            p, R = p0, R0
            for i, (op, oR, ax) in enumerate(joints):
                p = p + R @ op
                R = R @ oR
                axes.append(R @ ax)
                R = R @ _axis_rot(ax, q[k + i])
                pos.append(p)
                Rs.append(R)
        return pos, axes, Rs

    def chain_of(self):
        owner = []
        for ci, (_, _, joints, k) in enumerate(self.chains):
            owner += [(k, k + j + 1) for j in range(len(joints))]
        return owner


class Simulator:
    """Fixed-step simulator for one hand and one object."""

    def __init__(self, hand: HandModel, obj: ObjectModel, params: SimParams | None = None):
        self.hand = hand
        self.obj = obj
        self.params = params or SimParams()
        self.kin = _Kin(hand)
        self._owner = self.kin.chain_of()
        self.m = obj.mass
        self.I_body = obj.inertia
        self.floor_points = np.vstack([lowest_points(pr) for pr in obj.primitives]) if obj.primitives else np.zeros((0, 3))
        self.floor_radii = np.concatenate([np.full(len(lowest_points(pr)), pr.radius if isinstance(pr, (Capsule, Sphere)) else 0.0)
                                           for pr in obj.primitives]) if obj.primitives else np.zeros(0)

    def initial_state(self, pose: Pose, q: np.ndarray, t: float = 0.0) -> SimState:
        n = self.hand.n_joints
        q = np.asarray(q, dtype=float)
        if q.shape != (n,):
            raise ValueError(f"expected {n} joint values")
        return SimState(t, pose.p.copy(), pose.quat, np.zeros(3), np.zeros(3), q.copy(), np.zeros(n))

    # -- contact forces -------------------------------------------------
    def _contacts(self, p, R, v, w, q, qd, anchors):
        """Contact records plus the total object wrench and joint torques from contacts."""
        P = self.params
        recs = []
        f_tot = np.zeros(3)
        tau_tot = np.zeros(3)
        tau_q = np.zeros(self.kin.n)
        if self.kin.points:
            pos, axes, Rs = self.kin.frames(q)
        for li, pi, c in self.kin.points:
            x = pos[li] + Rs[li] @ c
            xl = R.T @ (x - p)
            for gi, prim in enumerate(self.obj.primitives):
                dist, n_l, _ = point_signed_distance(prim, xl)
                if dist >= 0:
                    continue
                lo, hi = self._owner[li]
                J = np.zeros((3, self.kin.n))
                J[:, lo:hi] = _cross_rows(np.array(axes[lo:hi]), x - np.array(pos[lo:hi])).T
                v_f = J @ qd
                n_out = R @ n_l
                r = x - p
                v_rel = v_f - (v + _cross(w, r))  # finger relative to object
                key = ("f", li, pi, gi)
                # normal force on the object points inward: -n_out
                f = self._pair_force(key, -dist, -n_out, -v_rel, x, anchors, anchor_frame=(p, R))
                recs.append(ContactRecord(key, li, x, -n_out, -dist, f))
                f_tot += f
                tau_tot += _cross(r, f)
                tau_q -= J.T @ f
        if P.floor and len(self.floor_points):
            X = p + self.floor_points @ R.T
            z = X[:, 2] - self.floor_radii
            for i in np.flatnonzero(z < 0):
                x = X[i].copy()
                x[2] -= self.floor_radii[i]
                r = x - p
                v_pt = v + _cross(w, r)
                key = ("o", i)
                f = self._pair_force(key, -z[i], np.array([0.0, 0.0, 1.0]), v_pt, x, anchors, anchor_frame=None)
                recs.append(ContactRecord(key, None, x, np.array([0.0, 0.0, 1.0]), float(-z[i]), f))
                f_tot += f
                tau_tot += _cross(r, f)
        return recs, f_tot, tau_tot, tau_q

    def _pair_force(self, key, depth, n, v_obj_rel, x, anchors, anchor_frame):
        """Force on the object. ``n`` points along the normal force on the object;
        ``v_obj_rel`` is the object point's velocity relative to the other body."""
        P = self.params
        vn = float(v_obj_rel @ n)
        N = max(0.0, P.k_contact * depth - P.c_contact * vn)
        vt = v_obj_rel - vn * n
        if N <= 0.0:
            return np.zeros(3)
        lim = P.mu * N
        if P.friction == "regularized":
            ft = -lim * vt / np.sqrt(vt @ vt + P.v_reg ** 2)
        else:
            a = anchors.get(key)
            if a is None:
                s = np.zeros(3)
            else:
                s = self._slip(key, x, a, anchor_frame)
                s = s - (s @ n) * n
            ft = -P.k_tangent * s - P.c_tangent * vt
            m = np.linalg.norm(ft)
            if m > lim:
                ft *= lim / m
        return N * n + ft

    @staticmethod
    def _slip(key, x, a, anchor_frame):
        """Displacement of the object-side contact point from its anchor.

        Finger contacts: the anchor is a finger point stored in the object frame,
        so the object's displacement relative to the finger is ``anchor - x``.
        Floor contacts: the anchor is the world location where the object point
        stuck, so the displacement is ``x - anchor``.
        """
        if anchor_frame is None:
            return x - a
        p, R = anchor_frame
        return (p + R @ a) - x

    # -- dynamics --------------------------------------------------------
    def _deriv(self, y, q_ref, anchors, f_ext, tau_ext):
        n = self.kin.n
        p, qt, v, w = y[0:3], y[3:7], y[7:10], y[10:13]
        q, qd = y[13:13 + n], y[13 + n:]
        qt = qt / np.linalg.norm(qt)
        R = quat_to_matrix(qt)
        _, f_c, tau_c, tau_q = self._contacts(p, R, v, w, q, qd, anchors)
        P = self.params
        I_w = R @ self.I_body @ R.T
        f = f_c + f_ext + np.array([0.0, 0.0, -self.m * P.gravity])
        tau = tau_c + tau_ext - _cross(w, I_w @ w)
        dv = f / self.m
        dw = np.linalg.solve(I_w, tau)
        dquat = 0.5 * quat_mul(np.array([w[0], w[1], w[2], 0.0]), qt)
        qdd = (P.joint_kp * (q_ref - q) - P.joint_kd * qd + tau_q) / P.armature
        return np.concatenate([v, dquat, dv, dw, qd, qdd])

    def step(self, state: SimState, q_ref: np.ndarray, f_ext=None, tau_ext=None) -> SimState:
        """One RK4 step of ``params.dt``; returns a new state (input untouched)."""
        P = self.params
        h = P.dt
        f_ext = np.zeros(3) if f_ext is None else np.asarray(f_ext, dtype=float)
        tau_ext = np.zeros(3) if tau_ext is None else np.asarray(tau_ext, dtype=float)
        q_ref = np.asarray(q_ref, dtype=float)
        y = np.concatenate([state.p, state.quat, state.v, state.w, state.q, state.qd])
        anchors = state.anchors
        k1 = self._deriv(y, q_ref, anchors, f_ext, tau_ext)
        k2 = self._deriv(y + 0.5 * h * k1, q_ref, anchors, f_ext, tau_ext)
        k3 = self._deriv(y + 0.5 * h * k2, q_ref, anchors, f_ext, tau_ext)
        k4 = self._deriv(y + h * k3, q_ref, anchors, f_ext, tau_ext)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        n = self.kin.n
        if not np.all(np.isfinite(y)):
            raise SimulationError(f"non-finite state at t={state.t + h:.4f}", state.as_dict())
        if np.abs(y[7:13]).max() > P.max_speed:
            raise SimulationError(f"object speed diverged at t={state.t + h:.4f}", state.as_dict())
        new = SimState(state.t + h, y[0:3], quat_normalize(y[3:7]), y[7:10], y[10:13], y[13:13 + n], y[13 + n:])
        R = quat_to_matrix(new.quat)
        recs, _, _, _ = self._contacts(new.p, R, new.v, new.w, new.q, new.qd, anchors)
        new.anchors = self._update_anchors(recs, anchors, new.p, R) if P.friction == "spring" else {}
        new.contacts = recs
        return new

    def _update_anchors(self, recs, anchors, p, R):
        P = self.params
        out = {}
        for c in recs:
            N = c.normal_force
            x = c.point
            frame = None if c.key[0] == "o" else (p, R)
            a = anchors.get(c.key)
            if a is None:
                # new contact sticks where it touched
                out[c.key] = x.copy() if frame is None else R.T @ (x - p)
                continue
            s = self._slip(c.key, x, a, frame)
            s = s - (s @ c.normal) * c.normal
            lim = P.mu * max(N, 0.0) / P.k_tangent
            m = np.linalg.norm(s)
            if m > lim:
                s = s * (lim / m)
                # move the anchor so the stretch equals the friction limit
                a = (x - s) if frame is None else R.T @ (x + s - p)
            out[c.key] = a
        return out

    # -- sensing ---------------------------------------------------------
    def sense_contacts(self, state: SimState) -> dict[int, LinkSensor]:
        return sense_contacts(state)

    def energy(self, state: SimState) -> float:
        R = quat_to_matrix(state.quat)
        I_w = R @ self.I_body @ R.T
        return 0.5 * self.m * state.v @ state.v + 0.5 * state.w @ I_w @ state.w + self.m * self.params.gravity * state.p[2]


def sense_contacts(state: SimState) -> dict[int, LinkSensor]:
    """Per-link total force applied to the object and center of pressure
    (contact points weighted by normal force)."""
    out: dict[int, LinkSensor] = {}
    acc: dict[int, list] = {}
    for c in state.contacts:
        if c.link is None:
            continue
        acc.setdefault(c.link, []).append(c)
    for link, cs in acc.items():
        F = np.sum([c.force for c in cs], axis=0)
        wts = np.array([max(c.normal_force, 0.0) for c in cs])
        pts = np.array([c.point for c in cs])
        cop = pts.mean(axis=0) if wts.sum() <= 0 else (wts[:, None] * pts).sum(axis=0) / wts.sum()
        out[link] = LinkSensor(F, cop)
    return out


def cop_of(points: np.ndarray, normal_forces: np.ndarray) -> np.ndarray:
    w = np.asarray(normal_forces, dtype=float)
    return (w[:, None] * np.asarray(points)).sum(axis=0) / w.sum()
