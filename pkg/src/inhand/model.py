"""Hand and object descriptions, contact formalism, kinematics and grasp enumeration."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .collision import Box, Capsule, HalfSpace, Primitive, penetrates, placed
from .geometry import Pose, axis_angle_matrix


class ModelError(ValueError):
    pass


@dataclass
class Link:
    """Rigid link attached after a revolute joint.

    ``end`` is the far end of the link's collision capsule in the link frame;
    ``contact_points`` are candidate contact locations in the link frame.
    """

    name: str
    end: np.ndarray
    radius: float = 0.005
    contact_points: list[np.ndarray] = field(default_factory=list)


@dataclass
class Joint:
    name: str
    axis: np.ndarray
    origin: Pose
    q_min: float
    q_max: float


@dataclass
class Finger:
    name: str
    base: Pose
    joints: list[Joint]
    links: list[Link]


@dataclass
class HandModel:
    name: str
    fingers: list[Finger]
    palm: Box
    base: Pose = field(default_factory=Pose)
    home: np.ndarray | None = None

    def __post_init__(self):
        if self.home is None:
            self.home = np.clip(np.zeros(self.n_joints), self.q_min, self.q_max)
        self.home = np.asarray(self.home, dtype=float)
        self.validate()

    def validate(self):
        names = [l.name for f in self.fingers for l in f.links]
        if len(set(names)) != len(names):
            raise ModelError("duplicate link names")
        for f in self.fingers:
            if len(f.joints) != len(f.links):
                raise ModelError(f"finger {f.name}: one link per joint required")
            for j in f.joints:
                if not j.q_min < j.q_max:
                    raise ModelError(f"joint {j.name}: q_min must be < q_max")
                if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                    raise ModelError(f"joint {j.name}: axis must be unit length")
        if self.home.shape != (self.n_joints,):
            raise ModelError("home configuration has wrong dimension")

    @cached_property
    def joints(self) -> list[Joint]:
        return [j for f in self.fingers for j in f.joints]

    @cached_property
    def links(self) -> list[Link]:
        return [l for f in self.fingers for l in f.links]

    @property
    def n_joints(self) -> int:
        return sum(len(f.joints) for f in self.fingers)

    @cached_property
    def q_min(self) -> np.ndarray:
        return np.array([j.q_min for j in self.joints])

    @cached_property
    def q_max(self) -> np.ndarray:
        return np.array([j.q_max for j in self.joints])

    @cached_property
    def link_names(self) -> list[str]:
        return [l.name for l in self.links]

    @cached_property
    def _link_info(self) -> dict[str, tuple[int, int, int]]:
        """link name -> (finger index, global index of the finger's first joint, global link index)."""
        out, k = {}, 0
        for fi, f in enumerate(self.fingers):
            start = k
            for l in f.links:
                out[l.name] = (fi, start, k)
                k += 1
        return out

    def link_index(self, name: str) -> int:
        try:
            return self._link_info[name][2]
        except KeyError:
            raise ModelError(f"unknown link {name!r}") from None

    def finger_of(self, link: str) -> int:
        return self._link_info[link][0]

    def chain_joints(self, link: str) -> range:
        """Global indices of the joints that move ``link``."""
        _, start, k = self._link_info[link]
        return range(start, k + 1)

    def finger_joints(self, finger: int) -> range:
        start = sum(len(f.joints) for f in self.fingers[:finger])
        return range(start, start + len(self.fingers[finger].joints))


@dataclass
class ContactCandidate:
    """Candidate contact location on the object.

    ``normal`` is the outward surface normal, ``tangent`` a unit vector
    perpendicular to it; ``approach`` lists object-frame via points a finger
    passes through before touching (default: 2 cm out along the normal).
    """

    name: str
    point: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    approach: list[np.ndarray] | None = None

    def approach_points(self, clearance: float = 0.02) -> list[np.ndarray]:
        if self.approach:
            return [np.asarray(a, dtype=float) for a in self.approach]
        return [self.point + clearance * self.normal]


@dataclass
class ObjectModel:
    name: str
    mass: float
    inertia: np.ndarray
    contacts: list[ContactCandidate]
    primitives: list[Primitive]

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.validate()

    def validate(self):
        if not self.mass > 0:
            raise ModelError("object mass must be positive")
        I = self.inertia
        if I.shape != (3, 3) or not np.allclose(I, I.T, atol=1e-12):
            raise ModelError("inertia must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(I).min() <= 0:
            raise ModelError("inertia must be positive definite")
        for c in self.contacts:
            if abs(np.linalg.norm(c.normal) - 1) > 1e-9 or abs(np.linalg.norm(c.tangent) - 1) > 1e-9:
                raise ModelError(f"contact {c.name}: normal and tangent must be unit vectors")
            if abs(c.normal @ c.tangent) > 1e-9:
                raise ModelError(f"contact {c.name}: tangent must be perpendicular to the normal")

    def contact_index(self, name: str) -> int:
        for i, c in enumerate(self.contacts):
            if c.name == name:
                return i
        raise ModelError(f"unknown object contact {name!r}")


@dataclass(frozen=True)
class ContactInfo:
    """One finger-link/object point contact.

    Identity (equality, hashing) is the triple ``(link, link_point,
    obj_point)``; the coordinates and the sliding mode ride along.
    ``slide_dir`` is the desired sliding direction of the finger over the
    object surface, in the object frame, or ``None`` for a sticking contact.
    """

    link: str
    link_point: int
    obj_point: int
    c_J: np.ndarray = field(compare=False, repr=False)
    c_O: np.ndarray = field(compare=False, repr=False)
    slide_dir: np.ndarray | None = field(default=None, compare=False, repr=False)

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.link, self.link_point, self.obj_point)

    @property
    def sliding(self) -> bool:
        return self.slide_dir is not None

    def label(self, obj: ObjectModel | None = None) -> str:
        target = obj.contacts[self.obj_point].name if obj is not None else str(self.obj_point)
        return f"{self.link}:{target}"

    def with_slide(self, direction: np.ndarray | None) -> "ContactInfo":
        return ContactInfo(self.link, self.link_point, self.obj_point, self.c_J, self.c_O,
                           None if direction is None else np.asarray(direction, dtype=float))


def make_contact(hand: HandModel, obj: ObjectModel, link: str, obj_point: int, link_point: int = 0) -> ContactInfo:
    lk = hand.links[hand.link_index(link)]
    if not 0 <= link_point < len(lk.contact_points):
        raise ModelError(f"link {link} has no contact point {link_point}")
    if not 0 <= obj_point < len(obj.contacts):
        raise ModelError(f"object has no contact candidate {obj_point}")
    return ContactInfo(link, link_point, obj_point,
                       np.asarray(lk.contact_points[link_point], dtype=float),
                       np.asarray(obj.contacts[obj_point].point, dtype=float))


@dataclass(frozen=True)
class Grasp:
    """A set of contacts with at most one contact per link. May be empty."""

    contacts: tuple[ContactInfo, ...] = ()

    def __post_init__(self):
        cs = tuple(sorted(self.contacts, key=lambda c: c.key))
        links = [c.link for c in cs]
        if len(set(links)) != len(links):
            raise ModelError("a grasp holds at most one contact per link")
        object.__setattr__(self, "contacts", cs)

    @classmethod
    def of(cls, contacts: Iterable[ContactInfo]) -> "Grasp":
        return cls(tuple(contacts))

    def __len__(self) -> int:
        return len(self.contacts)

    def __iter__(self) -> Iterator[ContactInfo]:
        return iter(self.contacts)

    def __contains__(self, c: ContactInfo) -> bool:
        return c in self.contacts

    @property
    def links(self) -> set[str]:
        return {c.link for c in self.contacts}

    def on_link(self, link: str) -> ContactInfo | None:
        for c in self.contacts:
            if c.link == link:
                return c
        return None

    def added(self, c: ContactInfo) -> "Grasp":
        return Grasp(self.contacts + (c,))

    def removed(self, link: str) -> "Grasp":
        return Grasp(tuple(c for c in self.contacts if c.link != link))

    def label(self, obj: ObjectModel | None = None) -> str:
        return "{" + ", ".join(c.label(obj) for c in self.contacts) + "}"


def forward_kinematics(hand: HandModel, q: np.ndarray) -> list[Pose]:
    """World pose of every link, in ``hand.links`` order."""
    q = np.asarray(q, dtype=float)
    if q.shape != (hand.n_joints,):
        raise ModelError(f"expected {hand.n_joints} joint values, got shape {q.shape}")
    out = []
    k = 0
    for f in hand.fingers:
        T = hand.base @ f.base
        for j in f.joints:
            T = T @ j.origin
            T = Pose(T.p, T.R @ axis_angle_matrix(j.axis, q[k]))
            out.append(T)
            k += 1
    return out


def contact_point_world(hand: HandModel, poses: Sequence[Pose], c: ContactInfo) -> np.ndarray:
    return poses[hand.link_index(c.link)].transform(c.c_J)


def contact_jacobian(hand: HandModel, q: np.ndarray, c: ContactInfo, poses: Sequence[Pose] | None = None) -> np.ndarray:
    """3 x n Jacobian of the world position of ``c``'s link point."""
    if poses is None:
        poses = forward_kinematics(hand, q)
    x = contact_point_world(hand, poses, c)
    J = np.zeros((3, hand.n_joints))
    joints = hand.joints
    for i in hand.chain_joints(c.link):
        P = poses[i]
        axis_w = P.R @ joints[i].axis
        J[:, i] = np.cross(axis_w, x - P.p)
    return J


def link_capsules(hand: HandModel, poses: Sequence[Pose]) -> list[Capsule]:
    return [Capsule(P.p, P.transform(l.end), l.radius) for P, l in zip(poses, hand.links)]


def hand_env_collision(hand: HandModel, poses: Sequence[Pose], env: Sequence[Primitive], margin: float = 0.0) -> bool:
    caps = link_capsules(hand, poses)
    return any(penetrates(c, e, margin) for c in caps for e in env)


def hand_self_collision(hand: HandModel, poses: Sequence[Pose], margin: float = 0.0) -> bool:
    """Link-link penetration between different fingers."""
    caps = link_capsules(hand, poses)
    owner = [hand.finger_of(l.name) for l in hand.links]
    for i, j in itertools.combinations(range(len(caps)), 2):
        if owner[i] != owner[j] and penetrates(caps[i], caps[j], margin):
            return True
    return False


def object_world_primitives(obj: ObjectModel, pose: Pose) -> list[Primitive]:
    return [placed(p, pose) for p in obj.primitives]


def object_collides(obj: ObjectModel, pose: Pose, env: Sequence[Primitive], palm: Primitive | None = None,
                    margin: float = 0.0) -> bool:
    """Object versus environment (and palm, if given) penetration."""
    prims = object_world_primitives(obj, pose)
    others = list(env) + ([palm] if palm is not None else [])
    return any(penetrates(a, b, margin) for a in prims for b in others)


def palm_world(hand: HandModel) -> Box:
    return placed(hand.palm, hand.base)


def _pairing_options(hand: HandModel, obj: ObjectModel, pairing: Mapping[str, Sequence]) -> list[list[ContactInfo]]:
    opts = []
    for link in hand.link_names:
        entries = pairing.get(link, ())
        cs = []
        for e in entries:
            lp, op = (0, e) if isinstance(e, (int, np.integer, str)) else e
            if isinstance(op, str):
                op = obj.contact_index(op)
            cs.append(make_contact(hand, obj, link, int(op), int(lp)))
        if cs:
            opts.append(cs)
    return opts


def enumerate_grasp_candidates(hand: HandModel, obj: ObjectModel, pairing: Mapping[str, Sequence],
                               feasible: Callable[[Grasp], bool] | None = None,
                               min_contacts: int = 2) -> list[Grasp]:
    """All grasps with at least ``min_contacts`` contacts, one per link.

    ``pairing`` maps link names to compatible object contacts, given as object
    candidate indices/names (link point 0) or ``(link_point, object_point)``
    pairs. ``feasible`` is the static filter (see
    :func:`inhand.ik.static_feasibility_filter`). Order is deterministic:
    hand link order, then pairing order, with "no contact" first.
    """
    opts = _pairing_options(hand, obj, pairing)
    if not opts:
        raise ModelError("empty link/object compatibility map")
    out = []
    for combo in itertools.product(*[[None] + o for o in opts]):
        cs = [c for c in combo if c is not None]
        if len(cs) < min_contacts:
            continue
        g = Grasp(tuple(cs))
        if feasible is None or feasible(g):
            out.append(g)
    if not out:
        raise ModelError("no feasible grasp candidate: task cannot be planned")
    return out


def compatibility_counts(hand: HandModel, pairing: Mapping[str, Sequence]) -> list[int]:
    """Number of compatible object candidates per hand link (hand link order)."""
    return [len(pairing.get(name, ())) for name in hand.link_names]


FLOOR = HalfSpace(np.array([0.0, 0.0, 1.0]), 0.0)
