"""Grasp-sequence decision process: actions, reward, DP planner and policies.

Sample indices are 0-based here: the action at sample ``m`` (``0 <= m < M``)
turns the current grasp into the commanded grasp evaluated at sample ``m``.
A state with ``m == M`` is terminal.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .evaluate import GraspEvaluator
from .geometry import Pose
from .model import ContactInfo, Grasp, HandModel, ObjectModel, make_contact
from .traj import ObjectTrajectory, external_at

log = logging.getLogger(__name__)

NO_CHANGE = "no_change"
ADD = "add"
REMOVE = "remove"
SLIDE = "slide"


class SequencingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SeqAction:
    kind: str
    link: str | None = None
    contact: ContactInfo | None = None

    def __post_init__(self):
        if self.kind == NO_CHANGE:
            if self.link is not None or self.contact is not None:
                raise ValueError("no_change takes no target")
        elif self.kind == REMOVE:
            if self.link is None:
                raise ValueError("remove needs a link")
        elif self.kind in (ADD, SLIDE):
            if self.contact is None:
                raise ValueError(f"{self.kind} needs a contact")
            object.__setattr__(self, "link", self.contact.link)
        else:
            raise ValueError(f"unknown action kind {self.kind!r}")

    def label(self, obj: ObjectModel | None = None) -> str:
        if self.kind == NO_CHANGE:
            return "n"
        if self.kind == REMOVE:
            return f"r({self.link})"
        return f"{self.kind[0]}({self.contact.label(obj)})"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "link": self.link}
        if self.contact is not None:
            d["link_point"] = self.contact.link_point
            d["obj_point"] = self.contact.obj_point
        return d


NO_CHANGE_ACTION = SeqAction(NO_CHANGE)


@dataclass
class SeqState:
    q: np.ndarray | None
    ref_pose: Pose | None
    goal_pose: Pose | None
    m: int
    grasp: Grasp
    w_ext: np.ndarray | None = None


def action_space(hand: HandModel, obj: ObjectModel, pairing: Mapping[str, Sequence]) -> list[SeqAction]:
    """``no_change`` first, then per paired link (hand order): adds, slides, remove."""
    acts = [NO_CHANGE_ACTION]
    for link in hand.link_names:
        if link not in pairing:
            continue
        cs = []
        for e in pairing[link]:
            lp, op = (0, e) if isinstance(e, (int, np.integer, str)) else e
            if isinstance(op, str):
                op = obj.contact_index(op)
            cs.append(make_contact(hand, obj, link, int(op), int(lp)))
        acts += [SeqAction(ADD, contact=c) for c in cs]
        acts += [SeqAction(SLIDE, contact=c) for c in cs]
        acts.append(SeqAction(REMOVE, link=link))
    return acts


def apply_action(G: Grasp, a: SeqAction) -> tuple[Grasp, bool]:
    """Commanded grasp and validity flag; invalid actions leave ``G`` unchanged."""
    if a.kind == NO_CHANGE:
        return G, True
    cur = G.on_link(a.link)
    if a.kind == ADD:
        if cur is not None:
            return G, False
        return G.added(a.contact), True
    if a.kind == REMOVE:
        if cur is None:
            return G, False
        return G.removed(a.link), True
    # slide: retarget the contact on the same link
    if cur is None or cur == a.contact:
        return G, False
    return G.removed(a.link).added(a.contact), True


def t_penalty(G: Grasp, a: SeqAction) -> float:
    """Invalid-transition penalty, literal to its three patterns.

    Adding onto a link already holding a *different* contact is invalid but
    matches none of the patterns, so it costs nothing here.
    """
    if a.kind in (ADD, SLIDE) and a.contact in G:
        return 2.0
    if a.kind == REMOVE and G.on_link(a.link) is None:
        return 2.0
    if a.kind == SLIDE and G.on_link(a.link) is None:
        return 10.0
    return 0.0


@dataclass
class RewardWeights:
    """Piecewise weight schedule. ``w5`` is computed from the normal angle in
    degrees (test and value); it multiplies the angle in radians."""

    w1_num: float = 100.0
    w1_threshold: float = 1e-4
    w1_low: float = 200.0
    w2_num: float = 100.0
    w2_threshold: float = 1.0
    w2_low: float = 50.0
    w3_external: float = 2000.0
    w3_free: float = 10.0
    w4: float = 10.0
    w5_threshold_deg: float = 100.0
    w5_cap: float = 10.0
    r_collision: float = -1e4
    eps: float = 1e-9

    def w1(self, dp: float) -> float:
        return self.w1_num / dp if dp >= self.w1_threshold else self.w1_low

    def w2(self, e: float) -> float:
        return self.w2_num / e if e >= self.w2_threshold else self.w2_low

    def w3(self, e: float, external: bool) -> float:
        if e >= self.w2_threshold:
            return 0.0
        return self.w3_external if external else self.w3_free

    def w5(self, theta_deg: float) -> float:
        return theta_deg / 2.0 if theta_deg < self.w5_threshold_deg else self.w5_cap


@dataclass
class StepMetrics:
    """Quantities the reward needs for one (sample, commanded grasp) pair."""

    dp_star: float
    e_star: float
    f_star: float
    f_hat_total: float
    external: bool
    collision: bool


@dataclass
class RewardTerms:
    ik: float = 0.0
    wrench: float = 0.0
    force: float = 0.0
    t: float = 0.0
    s: float = 0.0
    collision: bool = False
    total: float = 0.0

    def as_dict(self) -> dict:
        return {"ik": self.ik, "wrench": self.wrench, "force": self.force, "t": self.t, "s": self.s,
                "collision": self.collision, "total": self.total}


class SequenceModel(Protocol):
    M: int

    def metrics(self, m: int, grasp: Grasp) -> StepMetrics: ...

    def slide_geometry(self, old: ContactInfo, new: ContactInfo) -> tuple[float, float]: ...


def slide_geometry(obj: ObjectModel, old: ContactInfo, new: ContactInfo) -> tuple[float, float]:
    """Chord distance between object contact points and the angle (rad) between their normals."""
    a, b = obj.contacts[old.obj_point], obj.contacts[new.obj_point]
    ds = float(np.linalg.norm(b.point - a.point))
    c = float(np.clip(a.normal @ b.normal, -1.0, 1.0))
    return ds, float(np.arccos(c))


def reward_terms(G: Grasp, a: SeqAction, G_hat: Grasp, valid: bool, met: StepMetrics,
                 weights: RewardWeights, slide: tuple[float, float] | None = None) -> RewardTerms:
    W = weights
    if met.collision:
        return RewardTerms(collision=True, total=W.r_collision)
    r = RewardTerms()
    r.ik = -W.w1(met.dp_star) * met.dp_star
    r.wrench = -W.w2(met.e_star) * met.e_star
    w3 = W.w3(met.e_star, met.external)
    r.force = w3 * met.f_hat_total / max(met.f_star, W.eps) if w3 else 0.0
    r.t = t_penalty(G, a)
    if a.kind == SLIDE and valid:
        ds, th = slide if slide is not None else (0.0, 0.0)
        r.s = W.w4 * ds + W.w5(np.degrees(th)) * th
    r.total = r.ik + r.wrench + r.force - r.t - r.s
    return r


def reward(model: SequenceModel, m: int, G: Grasp, a: SeqAction, weights: RewardWeights) -> tuple[float, RewardTerms, Grasp]:
    """Reward of taking ``a`` in grasp ``G`` at sample ``m``; also returns the commanded grasp."""
    G_hat, valid = apply_action(G, a)
    slide = None
    if a.kind == SLIDE and valid:
        slide = model.slide_geometry(G.on_link(a.link), a.contact)
    terms = reward_terms(G, a, G_hat, valid, model.metrics(m, G_hat), weights, slide)
    return terms.total, terms, G_hat


class EvaluatorModel:
    """:class:`SequenceModel` backed by IK and the contact-force QP along a trajectory."""

    def __init__(self, traj: ObjectTrajectory, evaluator: GraspEvaluator, w_ext=None):
        self.traj = traj
        self.evaluator = evaluator
        self.w_ext = w_ext
        self.M = traj.M
        self._cache: dict = {}

    def metrics(self, m: int, grasp: Grasp) -> StepMetrics:
        key = (m, grasp)
        if key not in self._cache:
            s = self.traj.samples[m]
            f_ext, tau_ext = external_at(m, self.M, self.w_ext)
            ev = self.evaluator.evaluate(s, grasp, f_ext, tau_ext)
            external = f_ext is not None and (np.linalg.norm(f_ext) > 0 or np.linalg.norm(tau_ext) > 0)
            self._cache[key] = StepMetrics(ev.dp_max, ev.e_star, ev.f_star, ev.f_hat_total, bool(external),
                                           ev.collision)
        return self._cache[key]

    def slide_geometry(self, old: ContactInfo, new: ContactInfo) -> tuple[float, float]:
        return slide_geometry(self.evaluator.ctx.obj, old, new)


@dataclass
class PlanStep:
    m: int
    action: SeqAction
    grasp: Grasp
    terms: RewardTerms


@dataclass
class GraspSequencePlan:
    start: Grasp
    steps: list[PlanStep]
    cost: float
    decisions: dict = field(default_factory=dict, repr=False)  # (m, grasp) -> action

    @property
    def actions(self) -> list[SeqAction]:
        return [s.action for s in self.steps]

    @property
    def grasps(self) -> list[Grasp]:
        return [s.grasp for s in self.steps]

    def labels(self, obj: ObjectModel | None = None) -> list[str]:
        return [a.label(obj) for a in self.actions]

    def records(self, obj: ObjectModel | None = None) -> list[dict]:
        return [{"m": s.m, "action": s.action.to_dict(), "label": s.action.label(obj),
                 "grasp": [list(c.key) for c in s.grasp], "reward": s.terms.as_dict()} for s in self.steps]

    def to_jsonl(self, obj: ObjectModel | None = None) -> str:
        head = {"schema": "inhand-plan/1", "cost": self.cost, "start": [list(c.key) for c in self.start]}
        if obj is not None:
            head["start_label"] = self.start.label(obj)
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(r, sort_keys=True) for r in self.records(obj)]
        return "\n".join(lines) + "\n"


TIE_TOL = 1e-9


def _admissible(G_hat: Grasp, states: set) -> bool:
    return len(G_hat) >= 2 and G_hat in states


def plan_dp(model: SequenceModel, G_s: Grasp, candidates: Sequence[Grasp], actions: Sequence[SeqAction],
            weights: RewardWeights | None = None) -> GraspSequencePlan:
    """Minimum-cost (cost = -reward) action sequence over all samples.

    States are candidate grasps with at least two contacts, restricted per
    layer to those reachable from ``G_s``. Transitions into collision or out
    of the candidate set are pruned. Ties within ``1e-9`` go to the lower
    action index.
    """
    W = weights or RewardWeights()
    states = {g for g in candidates if len(g) >= 2}
    if G_s not in states:
        raise SequencingError("start grasp is not among the candidate grasps")
    M = model.M
    # forward reachability: layer[m] = grasps possible before the action at m
    layers = [{G_s}]
    edges: dict = {}
    for m in range(M):
        nxt = set()
        for G in sorted(layers[m], key=_grasp_key):
            for ai, a in enumerate(actions):
                G_hat, valid = apply_action(G, a)
                if not _admissible(G_hat, states):
                    continue
                r, terms, _ = reward(model, m, G, a, W)
                if terms.collision:
                    continue
                edges[(m, G, ai)] = (-r, terms, G_hat)
                nxt.add(G_hat)
        layers.append(nxt)
    value: dict = {(M, G): 0.0 for G in layers[M]}
    decisions: dict = {}
    for m in range(M - 1, -1, -1):
        for G in layers[m]:
            best, best_a = np.inf, None
            for ai in range(len(actions)):
                e = edges.get((m, G, ai))
                if e is None or (m + 1, e[2]) not in value:
                    continue
                c = e[0] + value[(m + 1, e[2])]
                if c < best - TIE_TOL:
                    best, best_a = c, ai
            if best_a is not None:
                value[(m, G)] = best
                decisions[(m, G)] = actions[best_a]
    if (0, G_s) not in value:
        raise SequencingError("no collision-free grasp sequence exists")
    steps = []
    G = G_s
    for m in range(M):
        a = decisions[(m, G)]
        cost, terms, G_hat = edges[(m, G, actions.index(a))]
        steps.append(PlanStep(m, a, G_hat, terms))
        G = G_hat
    return GraspSequencePlan(G_s, steps, float(value[(0, G_s)]), decisions)


def plan_brute_force(model: SequenceModel, G_s: Grasp, candidates: Sequence[Grasp], actions: Sequence[SeqAction],
                     weights: RewardWeights | None = None) -> tuple[float, list[int]]:
    """Exhaustive enumeration of action-index sequences (lexicographic order), for testing."""
    W = weights or RewardWeights()
    states = {g for g in candidates if len(g) >= 2}
    best, best_seq = np.inf, None
    for seq in itertools.product(range(len(actions)), repeat=model.M):
        G, total, ok = G_s, 0.0, True
        for m, ai in enumerate(seq):
            G_hat, _ = apply_action(G, actions[ai])
            if not _admissible(G_hat, states):
                ok = False
                break
            r, terms, _ = reward(model, m, G, actions[ai], W)
            if terms.collision:
                ok = False
                break
            total -= r
            G = G_hat
        if ok and total < best - TIE_TOL:
            best, best_seq = total, list(seq)
    if best_seq is None:
        raise SequencingError("no collision-free grasp sequence exists")
    return best, best_seq


def _grasp_key(G: Grasp):
    return tuple(c.key for c in G)


class Policy(Protocol):
    def decide(self, s: SeqState) -> SeqAction: ...


class DPPolicy:
    """Lookup into the DP decision table; unknown or terminal states hold the grasp."""

    def __init__(self, plan: GraspSequencePlan, M: int):
        self.plan = plan
        self.M = M

    def decide(self, s: SeqState) -> SeqAction:
        if s.m >= self.M:
            return NO_CHANGE_ACTION
        a = self.plan.decisions.get((s.m, s.grasp))
        return a if a is not None else NO_CHANGE_ACTION


class PlanReplayPolicy:
    """Returns the plan's action at sample ``m`` regardless of the grasp."""

    def __init__(self, plan: GraspSequencePlan):
        self.plan = plan

    def decide(self, s: SeqState) -> SeqAction:
        if s.m >= len(self.plan.steps):
            return NO_CHANGE_ACTION
        return self.plan.steps[s.m].action


class GreedyPolicy:
    """One-step reward maximizer over admissible actions (ties: lower index)."""

    def __init__(self, model: SequenceModel, candidates: Sequence[Grasp], actions: Sequence[SeqAction],
                 weights: RewardWeights | None = None):
        self.model = model
        self.states = {g for g in candidates if len(g) >= 2}
        self.actions = list(actions)
        self.weights = weights or RewardWeights()

    def decide(self, s: SeqState) -> SeqAction:
        if s.m >= self.model.M:
            return NO_CHANGE_ACTION
        best, best_a = -np.inf, NO_CHANGE_ACTION
        for a in self.actions:
            G_hat, _ = apply_action(s.grasp, a)
            if not _admissible(G_hat, self.states):
                continue
            r, terms, _ = reward(self.model, s.m, s.grasp, a, self.weights)
            if not terms.collision and r > best + TIE_TOL:
                best, best_a = r, a
        return best_a


def plan_from_records(records: list[dict], start: Grasp, hand: HandModel, obj: ObjectModel,
                      cost: float) -> GraspSequencePlan:
    """Rebuild a plan from exported records (decision table not restored)."""
    steps = []
    for r in records:
        a = r["action"]
        if a["kind"] in (ADD, SLIDE):
            act = SeqAction(a["kind"], contact=make_contact(hand, obj, a["link"], a["obj_point"], a["link_point"]))
        elif a["kind"] == REMOVE:
            act = SeqAction(REMOVE, link=a["link"])
        else:
            act = NO_CHANGE_ACTION
        g = Grasp.of(make_contact(hand, obj, k[0], k[2], k[1]) for k in r["grasp"])
        t = RewardTerms(**r["reward"])
        steps.append(PlanStep(r["m"], act, g, t))
    return GraspSequencePlan(start, steps, cost)
