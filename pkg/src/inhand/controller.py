"""Low-level control: object pose tracking, contact force tracking by joint
reference offsets, and the add/slide/remove contact transitions."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose, rotation_error
from .ik import ik_step
from .model import ContactInfo, Grasp, HandModel, ObjectModel, contact_jacobian, contact_point_world, forward_kinematics
from .wrench import GRAVITY, optimize_contact_forces, required_wrench

log = logging.getLogger(__name__)

APPROACH = "approach"
FORCE_HOLD = "force-hold"
CONFIRM = "confirm"
DONE = "done"
FAILED = "failed"
PHASE_ORDER = {APPROACH: 0, FORCE_HOLD: 1, CONFIRM: 2, DONE: 3, FAILED: 3}


@dataclass
class ControllerGains:
    k_p1: float = 100.0
    k_d1: float = 20.0
    k_p2: float = 100.0
    k_d2: float = 20.0
    k_pj: float | np.ndarray = 20.0
    dt: float = 0.01

    def __post_init__(self):
        vals = [self.k_p1, self.k_d1, self.k_p2, self.k_d2, self.dt]
        if any(not v > 0 for v in vals) or np.any(np.asarray(self.k_pj) <= 0):
            raise ValueError("controller gains and period must be positive")


@dataclass
class TransitionParams:
    touch_force: float = 0.1  # N, held while confirming a new contact
    confirm_force: float = 0.05  # N
    confirm_time: float = 0.1  # s
    release_force: float = 1e-3  # N, below this a contact counts as released
    release_time: float = 1.0  # s
    timeout: float = 5.0  # s
    approach_speed: float = 0.05  # m/s
    retract_speed: float = 0.05  # m/s
    retract_distance: float = 0.02  # m
    slide_speed: float = 0.02  # m/s
    slide_tolerance: float = 1e-3  # m
    via_tolerance: float = 1e-3  # m
    clearance: float = 0.02  # m, default approach via point offset

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"transition parameter {k} must be positive")


@dataclass
class ContactTransition:
    kind: str  # add | slide | remove
    link: str
    target: ContactInfo | None  # new contact for add/slide
    old: ContactInfo | None = None  # contact being slid or removed
    phase: str = APPROACH
    elapsed: float = 0.0
    timer: float = 0.0
    via: int = 0
    travelled: float = 0.0
    params: TransitionParams = field(default_factory=TransitionParams)

    @property
    def finished(self) -> bool:
        return self.phase in (DONE, FAILED)


@dataclass
class TransitionCommand:
    """Per-cycle finger command: a world displacement of the contact point and
    an optional force (on the object) to regulate along ``force_axis``."""

    dp: np.ndarray
    force: np.ndarray | None = None
    force_axis: np.ndarray | None = None


def object_tracking(p_ref, R_ref, p, R, v_hat, w_hat, gains: ControllerGains):
    """Desired object accelerations from pose errors, damped by the integrated
    desired velocities ``v_hat``/``w_hat`` (measured velocity is not used).

    Returns ``(v_dot, w_dot, v_hat_next, w_hat_next)``.
    """
    g = gains
    v_dot = g.k_p1 * (np.asarray(p_ref) - np.asarray(p)) - g.k_d1 * np.asarray(v_hat)
    w_dot = g.k_p2 * rotation_error(R, R_ref) - g.k_d2 * np.asarray(w_hat)
    return v_dot, w_dot, v_hat + g.dt * v_dot, w_hat + g.dt * w_dot


def force_tracking(f_star, f, J, k_pj, v_hat, w_hat, p_O, dt: float, gain: float = 1.0) -> np.ndarray:
    """Contact-point displacement ``J K^-1 J^T (f* - f) + dt (v_hat + w_hat x p_O)``.

    ``f*`` and ``f`` are forces applied to the object. ``J`` is the 3 x n
    contact Jacobian and ``k_pj`` the joint proportional gains (scalar or
    per joint).
    """
    J = np.asarray(J, dtype=float)
    K = np.broadcast_to(np.asarray(k_pj, dtype=float), (J.shape[1],))
    if np.any(K == 0):
        raise ValueError("zero joint gain: the admittance map is singular")
    dq = (J.T @ (np.asarray(f_star) - np.asarray(f))) / K
    return gain * (J @ dq) + dt * (np.asarray(v_hat) + np.cross(w_hat, p_O))


def slide_projection(dp, n) -> np.ndarray:
    """Remove the component of ``dp`` along the unit normal ``n``."""
    dp = np.asarray(dp, dtype=float)
    n = np.asarray(n, dtype=float)
    return dp - (n @ dp) * n


def _step_toward(x, target, max_len):
    d = target - x
    L = float(np.linalg.norm(d))
    if L <= max_len or L == 0.0:
        return d
    return d * (max_len / L)


def transition_step(tr: ContactTransition, force: np.ndarray, x: np.ndarray, obj_pose: Pose,
                    obj: ObjectModel, dt: float) -> tuple[ContactTransition, TransitionCommand]:
    """Advance one control period.

    ``force`` is the sensed force the finger applies to the object, ``x`` the
    finger's contact point (world).
    """
    P = tr.params
    tr = replace(tr, elapsed=tr.elapsed + dt)
    zero = TransitionCommand(np.zeros(3))
    if tr.finished:
        return tr, zero
    if tr.elapsed > P.timeout + 1e-9:
        log.warning("%s transition on %s timed out in phase %s", tr.kind, tr.link, tr.phase)
        return replace(tr, phase=FAILED), zero
    if tr.kind == "add":
        cand = obj.contacts[tr.target.obj_point]
        n_w = obj_pose.R @ cand.normal
        f_n = float(-(force @ n_w))  # push into the surface
        c_w = obj_pose.transform(tr.target.c_O)
        if tr.phase == APPROACH:
            if f_n >= P.confirm_force:
                # contact detected: start holding, confirmation timing begins next period
                return replace(tr, phase=FORCE_HOLD, timer=0.0), TransitionCommand(
                    np.zeros(3), -P.touch_force * n_w, n_w)
            else:
                vias = [obj_pose.transform(a) for a in cand.approach_points(P.clearance)]
                step = P.approach_speed * dt
                if tr.via < len(vias):
                    dp = _step_toward(x, vias[tr.via], step)
                    if np.linalg.norm(vias[tr.via] - x) <= P.via_tolerance:
                        tr = replace(tr, via=tr.via + 1)
                    return tr, TransitionCommand(dp)
                # final leg: along -n through the contact point, correcting lateral drift
                lateral = slide_projection(c_w - x, n_w)
                return tr, TransitionCommand(_step_toward(np.zeros(3), lateral, step) - step * n_w)
        # force-hold / confirm: regulate a small inward force
        f_ref = -P.touch_force * n_w
        if f_n >= P.confirm_force:
            timer = tr.timer + dt
            tr = replace(tr, phase=CONFIRM, timer=timer)
            if timer >= P.confirm_time - 1e-12:
                return replace(tr, phase=DONE), zero
        else:
            tr = replace(tr, timer=0.0)
        return tr, TransitionCommand(np.zeros(3), f_ref, n_w)
    if tr.kind == "remove":
        cand = obj.contacts[tr.old.obj_point]
        n_w = obj_pose.R @ cand.normal
        released = float(np.linalg.norm(force)) < P.release_force
        timer = tr.timer + dt if released else 0.0
        phase = CONFIRM if (released or tr.phase == CONFIRM) else APPROACH
        tr = replace(tr, timer=timer, phase=phase)
        if timer >= P.release_time - 1e-12:
            return replace(tr, phase=DONE), zero
        step = min(P.retract_speed * dt, max(P.retract_distance - tr.travelled, 0.0))
        tr = replace(tr, travelled=tr.travelled + step)
        return tr, TransitionCommand(step * n_w)
    if tr.kind == "slide":
        cand = obj.contacts[tr.target.obj_point]
        n_w = obj_pose.R @ obj.contacts[tr.old.obj_point].normal
        goal = obj_pose.transform(tr.target.c_O)
        dist = float(np.linalg.norm(slide_projection(goal - x, n_w)))
        if dist <= P.slide_tolerance:
            return replace(tr, phase=DONE), zero
        dp = _step_toward(np.zeros(3), slide_projection(goal - x, n_w), P.slide_speed * dt)
        return tr, TransitionCommand(dp, force_axis=n_w)
    raise ValueError(f"unknown transition kind {tr.kind!r}")


@dataclass
class Snapshot:
    """Immutable sensor snapshot handed to the controller each period."""

    t: float
    q: np.ndarray
    pose: Pose
    forces: dict  # link name -> force applied to the object (world)


@dataclass
class WrenchParams:
    mu: float = 0.5
    L: int = 12
    w_t: float = 1.0
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())


class Controller:
    """Joint reference generator combining the three controllers.

    Each :meth:`cycle` runs object tracking, the contact-force QP for the
    active grasp, force tracking per contact, any active transition, and one
    IK step on the stacked contact displacements.
    """

    def __init__(self, hand: HandModel, obj: ObjectModel, q_ref: np.ndarray, grasp: Grasp,
                 gains: ControllerGains | None = None, wrench: WrenchParams | None = None,
                 transition_params: TransitionParams | None = None, force_gain: float = 1.0):
        self.hand = hand
        self.obj = obj
        self.q_ref = np.array(q_ref, dtype=float)
        self.grasp = grasp
        self.gains = gains or ControllerGains()
        self.wrench = wrench or WrenchParams()
        self.tparams = transition_params or TransitionParams()
        self.force_gain = force_gain
        self.v_hat = np.zeros(3)
        self.w_hat = np.zeros(3)
        self.transition: ContactTransition | None = None
        self.telemetry: list[dict] = []
        self.last_forces: dict = {}

    # the grasp whose contacts carry the object this cycle
    def force_grasp(self) -> Grasp:
        tr = self.transition
        if tr is None or tr.finished:
            return self.grasp
        if tr.kind == "remove":
            return self.grasp.removed(tr.link)
        if tr.kind == "slide":
            d = self._slide_dir(tr)
            return self.grasp.removed(tr.link).added(tr.old.with_slide(d))
        return self.grasp

    def _slide_dir(self, tr: ContactTransition):
        d = self.obj.contacts[tr.target.obj_point].point - self.obj.contacts[tr.old.obj_point].point
        n = self.obj.contacts[tr.old.obj_point].normal
        d = d - (d @ n) * n
        nd = np.linalg.norm(d)
        return d / nd if nd > 1e-12 else None

    def start_transition(self, kind: str, link: str, target: ContactInfo | None):
        old = self.grasp.on_link(link)
        self.transition = ContactTransition(kind, link, target, old, params=self.tparams)

    def reference_frozen(self) -> bool:
        tr = self.transition
        return tr is not None and tr.kind == "add" and not tr.finished

    def cycle(self, snap: Snapshot, ref: Pose, f_ext=None, tau_ext=None) -> np.ndarray:
        g = self.gains
        hand, obj = self.hand, self.obj
        pose = snap.pose
        v_dot, w_dot, v_next, w_next = object_tracking(ref.p, ref.R, pose.p, pose.R, self.v_hat, self.w_hat, g)
        f_E = obj.mass * self.wrench.gravity + (np.zeros(3) if f_ext is None else np.asarray(f_ext))
        tau_E = np.zeros(3) if tau_ext is None else np.asarray(tau_ext)
        target = required_wrench(obj, self.w_hat, v_dot, w_dot, f_E, tau_E, pose.R)
        G = self.force_grasp()
        poses = forward_kinematics(hand, snap.q)
        targets, jacs = [], []
        f_star = {}
        if len(G):
            sol = optimize_contact_forces(G, obj, pose.R, target, self.wrench.w_t, self.wrench.mu, self.wrench.L)
            for k, c in enumerate(G):
                J = contact_jacobian(hand, snap.q, c, poses)
                f = snap.forces.get(c.link, np.zeros(3))
                dp = force_tracking(sol.forces[k], f, J, g.k_pj, self.v_hat, self.w_hat, pose.R @ c.c_O, g.dt,
                                    self.force_gain)
                tr = self.transition
                if tr is not None and not tr.finished and tr.kind == "slide" and c.link == tr.link:
                    n_w = pose.R @ obj.contacts[tr.old.obj_point].normal
                    x = contact_point_world(hand, poses, c)
                    tr, cmd = transition_step(tr, f, x, pose, obj, g.dt)
                    self.transition = tr
                    # normal direction: force control; tangent: position control
                    dp = (dp @ n_w) * n_w + cmd.dp + slide_projection(g.dt * (self.v_hat + np.cross(self.w_hat, pose.R @ c.c_O)), n_w)
                targets.append(dp)
                jacs.append(J)
                f_star[c.link] = sol.forces[k]
        tr = self.transition
        if tr is not None and not tr.finished and tr.kind in ("add", "remove"):
            c = tr.target if tr.kind == "add" else tr.old
            J = contact_jacobian(hand, snap.q, c, poses)
            x = contact_point_world(hand, poses, c)
            f = snap.forces.get(c.link, np.zeros(3))
            tr, cmd = transition_step(tr, f, x, pose, obj, g.dt)
            self.transition = tr
            dp = cmd.dp
            if cmd.force is not None:
                dp = dp + force_tracking(cmd.force, f, J, g.k_pj, np.zeros(3), np.zeros(3), np.zeros(3), g.dt,
                                         self.force_gain)
                dp = dp + g.dt * (self.v_hat + np.cross(self.w_hat, pose.R @ c.c_O))
            if not tr.finished:
                targets.append(dp)
                jacs.append(J)
        if targets:
            dq = ik_step(self.q_ref, targets, jacs, 1.0, hand.q_min, hand.q_max)
            self.q_ref = self.q_ref + dq
        self.v_hat, self.w_hat = v_next, w_next
        self.last_forces = f_star
        self.telemetry.append({"t": snap.t, "q_ref": self.q_ref.copy(), "q": snap.q.copy(), "p": pose.p.copy(),
                               "quat": pose.quat, "f_star": f_star,
                               "f": {k: v.copy() for k, v in snap.forces.items()},
                               "phase": None if self.transition is None else self.transition.phase})
        return self.q_ref.copy()

    def finish_transition(self) -> ContactTransition | None:
        """Commit a finished transition to the active grasp; returns it."""
        tr = self.transition
        if tr is None or not tr.finished:
            return None
        if tr.phase == DONE:
            if tr.kind == "add":
                self.grasp = self.grasp.added(tr.target)
            elif tr.kind == "remove":
                self.grasp = self.grasp.removed(tr.link)
            else:
                self.grasp = self.grasp.removed(tr.link).added(tr.target)
        self.transition = None
        return tr


def control_cycle(ctrl: Controller, snap: Snapshot, ref: Pose, f_ext=None, tau_ext=None) -> np.ndarray:
    """Functional entry point: one controller period, returns the joint reference."""
    return ctrl.cycle(snap, ref, f_ext, tau_ext)
