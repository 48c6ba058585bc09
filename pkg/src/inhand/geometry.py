"""Rigid transforms, rotations and quaternions.

Quaternions are stored scalar-last, ``(x, y, z, w)``, everywhere in the package.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw, applied as Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula. ``axis`` must be unit length."""
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] *= -1
        out = U @ Vt
    return out


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Unit quaternion with non-negative scalar part.

    When the scalar part is exactly zero the first non-zero vector component
    is made positive so the result is still unique.
    """
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError(f"cannot normalize near-zero quaternion {q}")
    q = q / n
    if q[3] < 0:
        q = -q
    elif q[3] == 0:
        nz = np.flatnonzero(q[:3])
        if q[nz[0]] < 0:
            q = -q
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method, result passed through :func:`quat_normalize`."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s, 0.25 * s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s, (R[2, 1] - R[1, 2]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s, (R[0, 2] - R[2, 0]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s, (R[1, 0] - R[0, 1]) / s]
    return quat_normalize(np.array(q))


def rotation_error(R_cur: np.ndarray, R_ref: np.ndarray) -> np.ndarray:
    """Axis of the rotation taking ``R_cur`` to ``R_ref``, scaled by sin(angle).

    The relative rotation is ``R_ref @ R_cur.T`` (world frame). At an angle of
    exactly pi the sine vanishes, so the result is zero whatever axis is picked.
    """
    Rr = R_ref @ R_cur.T
    return 0.5 * np.array([Rr[2, 1] - Rr[1, 2], Rr[0, 2] - Rr[2, 0], Rr[1, 0] - Rr[0, 1]])


def rotation_angle(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Angle (rad) of the relative rotation between two rotation matrices."""
    c = 0.5 * (np.trace(R_b @ R_a.T) - 1.0)
    s = np.linalg.norm(rotation_error(R_a, R_b))
    return float(np.arctan2(s, np.clip(c, -1.0, 1.0)))


def rotation_axis(R_rel: np.ndarray) -> np.ndarray:
    """Unit axis of a relative rotation; identity maps to +z.

    At an angle of pi the axis sign is ambiguous; the component with the
    largest magnitude is made positive.
    """
    v = 0.5 * np.array([R_rel[2, 1] - R_rel[1, 2], R_rel[0, 2] - R_rel[2, 0], R_rel[1, 0] - R_rel[0, 1]])
    n = np.linalg.norm(v)
    if n > 1e-9:
        return v / n
    if np.trace(R_rel) > 0:
        return np.array([0.0, 0.0, 1.0])
    B = 0.5 * (R_rel + np.eye(3))
    i = int(np.argmax(np.diag(B)))
    a = B[:, i] / np.sqrt(B[i, i])
    return a if a[np.argmax(np.abs(a))] > 0 else -a


def quat_angle(qa: np.ndarray, qb: np.ndarray) -> float:
    d = abs(float(np.dot(qa, qb)))
    return 2.0 * float(np.arccos(min(1.0, d)))


def slerp(qa: np.ndarray, qb: np.ndarray, s: float) -> np.ndarray:
    d = float(np.dot(qa, qb))
    if d < 0:
        qb, d = -qb, -d
    if d > 0.9995:
        return quat_normalize(qa + s * (qb - qa))
    th = np.arccos(d)
    return quat_normalize((np.sin((1 - s) * th) * qa + np.sin(s * th) * qb) / np.sin(th))


def align_quaternions(qs: np.ndarray) -> np.ndarray:
    """Flip signs so consecutive quaternions have non-negative dot products."""
    out = np.array(qs, dtype=float, copy=True)
    for i in range(1, len(out)):
        if np.dot(out[i - 1], out[i]) < 0:
            out[i] = -out[i]
    return out


@dataclass
class Pose:
    """Position ``p`` (m) and rotation ``R``."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)

    @classmethod
    def from_quat(cls, p, q) -> "Pose":
        return cls(p, quat_to_matrix(q))

    @classmethod
    def from_rpy(cls, p, rpy) -> "Pose":
        return cls(p, rpy_to_matrix(*rpy))

    @property
    def quat(self) -> np.ndarray:
        return matrix_to_quat(self.R)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return self.p + self.R @ x

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.p + self.R @ other.p, self.R @ other.R)

    def inverse(self) -> "Pose":
        return Pose(-self.R.T @ self.p, self.R.T)

    def renormalized(self) -> "Pose":
        return Pose(self.p.copy(), orthonormalize(self.R))

    def is_valid(self, tol: float = 1e-9) -> bool:
        return bool(np.allclose(self.R @ self.R.T, np.eye(3), atol=tol)
                    and abs(np.linalg.det(self.R) - 1.0) < tol
                    and np.all(np.isfinite(self.p)))

    def copy(self) -> "Pose":
        return Pose(self.p.copy(), self.R.copy())


@dataclass
class Twist:
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.w = np.asarray(self.w, dtype=float).reshape(3)


def pose_distance(a: Pose, b: Pose, rot_weight: float = 0.1) -> float:
    """``||dp|| + rot_weight * angle`` with ``rot_weight`` in m/rad."""
    return float(np.linalg.norm(a.p - b.p) + rot_weight * rotation_angle(a.R, b.R))
