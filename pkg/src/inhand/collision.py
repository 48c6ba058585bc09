"""Convex collision primitives: spheres, capsules, boxes and half-spaces.

All queries work on primitives already placed in a common frame; use
:func:`placed` to move an object- or link-frame primitive into the world.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float


@dataclass(frozen=True)
class Capsule:
    a: np.ndarray
    b: np.ndarray
    radius: float


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    R: np.ndarray = field(default_factory=lambda: np.eye(3))

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ self.R.T


@dataclass(frozen=True)
class HalfSpace:
    """Solid region ``normal . x <= offset``; e.g. the floor is normal +z, offset 0."""

    normal: np.ndarray
    offset: float = 0.0


Primitive = Sphere | Capsule | Box | HalfSpace


def placed(prim: Primitive, pose: Pose) -> Primitive:
    if isinstance(prim, Sphere):
        return Sphere(pose.transform(prim.center), prim.radius)
    if isinstance(prim, Capsule):
        return Capsule(pose.transform(prim.a), pose.transform(prim.b), prim.radius)
    if isinstance(prim, Box):
        return Box(pose.transform(prim.center), prim.half_extents, pose.R @ prim.R)
    n = pose.R @ prim.normal
    return HalfSpace(n, prim.offset + float(n @ pose.p))


def point_box(box: Box, x: np.ndarray):
    """Signed distance from ``x`` to a box surface, outward normal, surface point."""
    xl = box.R.T @ (x - box.center)
    h = box.half_extents
    d = np.abs(xl) - h
    if np.any(d > 0):
        q = np.clip(xl, -h, h)
        diff = xl - q
        dist = float(np.linalg.norm(diff))
        n_l = diff / dist
        return dist, box.R @ n_l, box.center + box.R @ q
    i = int(np.argmax(d))
    n_l = np.zeros(3)
    n_l[i] = 1.0 if xl[i] >= 0 else -1.0
    q = xl.copy()
    q[i] = n_l[i] * h[i]
    return float(d[i]), box.R @ n_l, box.center + box.R @ q


def point_signed_distance(prim: Primitive, x: np.ndarray):
    """``(distance, outward normal, closest surface point)``; distance < 0 inside."""
    if isinstance(prim, Box):
        return point_box(prim, x)
    if isinstance(prim, HalfSpace):
        n = prim.normal
        dist = float(n @ x - prim.offset)
        return dist, n.copy(), x - dist * n
    if isinstance(prim, Sphere):
        c, r = prim.center, prim.radius
    else:
        c, r = closest_on_segment(prim.a, prim.b, x), prim.radius
    diff = x - c
    n = np.linalg.norm(diff)
    u = diff / n if n > 1e-12 else np.array([0.0, 0.0, 1.0])
    return float(n - r), u, c + r * u


def closest_on_segment(a, b, x):
    ab = b - a
    den = float(ab @ ab)
    t = 0.0 if den < 1e-18 else float(np.clip((x - a) @ ab / den, 0.0, 1.0))
    return a + t * ab


def segment_segment_distance(p1, q1, p2, q2) -> float:
    """Closest distance between two segments (Ericson, Real-Time Collision Detection)."""
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    eps = 1e-18
    if a <= eps and e <= eps:
        return float(np.linalg.norm(r))
    if a <= eps:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e <= eps:
            t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
        else:
            bb = d1 @ d2
            den = a * e - bb * bb
            s = np.clip((bb * f - c * e) / den, 0.0, 1.0) if den > eps else 0.0
            t = (bb * s + f) / e
            if t < 0:
                t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
            elif t > 1:
                t, s = 1.0, np.clip((bb - c) / a, 0.0, 1.0)
    return float(np.linalg.norm((p1 + s * d1) - (p2 + t * d2)))


def _segment_box_distance(a, b, box: Box) -> float:
    # distance to a convex set is convex along the segment
    lo, hi = 0.0, 1.0
    f = lambda t: point_box(box, a + t * (b - a))[0]
    for _ in range(40):
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if f(m1) < f(m2):
            hi = m2
        else:
            lo = m1
    return min(f(0.0), f(1.0), f(0.5 * (lo + hi)))


def _box_box_overlap(A: Box, B: Box, margin: float) -> bool:
    axes = [A.R[:, i] for i in range(3)] + [B.R[:, i] for i in range(3)]
    axes += [np.cross(A.R[:, i], B.R[:, j]) for i in range(3) for j in range(3)]
    d = B.center - A.center
    for ax in axes:
        n = np.linalg.norm(ax)
        if n < 1e-9:
            continue
        ax = ax / n
        ra = np.sum(A.half_extents * np.abs(A.R.T @ ax))
        rb = np.sum(B.half_extents * np.abs(B.R.T @ ax))
        if abs(d @ ax) > ra + rb + margin:
            return False
    return True


def _support_min(prim: Primitive, n: np.ndarray) -> float:
    """Minimum of ``n . x`` over the primitive."""
    if isinstance(prim, Sphere):
        return float(n @ prim.center - prim.radius)
    if isinstance(prim, Capsule):
        return float(min(n @ prim.a, n @ prim.b) - prim.radius)
    if isinstance(prim, Box):
        return float(n @ prim.center - np.sum(prim.half_extents * np.abs(prim.R.T @ n)))
    raise TypeError("half-space has no finite support")


def penetrates(a: Primitive, b: Primitive, margin: float = 0.0) -> bool:
    """True when the primitives overlap by more than ``-margin``.

    A positive ``margin`` demands clearance; ``margin=0`` flags strict
    penetration only, so touching shapes do not collide.
    """
    if isinstance(a, HalfSpace) and isinstance(b, HalfSpace):
        return True
    if isinstance(a, HalfSpace):
        a, b = b, a
    if isinstance(b, HalfSpace):
        return _support_min(a, b.normal) - b.offset < margin - 1e-12
    if isinstance(a, Box) and isinstance(b, Box):
        return _box_box_overlap(a, b, margin - 1e-12)
    if isinstance(a, Box):
        a, b = b, a
    seg_a = (a.center, a.center) if isinstance(a, Sphere) else (a.a, a.b)
    if isinstance(b, Box):
        return _segment_box_distance(*seg_a, b) - a.radius < margin - 1e-12
    seg_b = (b.center, b.center) if isinstance(b, Sphere) else (b.a, b.b)
    return segment_segment_distance(*seg_a, *seg_b) - a.radius - b.radius < margin - 1e-12


def lowest_points(prim: Primitive) -> np.ndarray:
    """Points used for object-versus-floor contact (box corners, capsule caps)."""
    if isinstance(prim, Box):
        return prim.corners()
    if isinstance(prim, Capsule):
        return np.array([prim.a, prim.b])
    if isinstance(prim, Sphere):
        return prim.center[None, :]
    raise TypeError("half-space has no points")
