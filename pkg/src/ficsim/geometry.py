"""Rigid-body geometry: poses, twists and wrenches.

Rotations are stored as unit quaternions ordered (w, x, y, z).  Every
6-vector in the package (twists, wrenches, pose errors, Jacobian rows)
is ordered [angular; linear].  Serialized poses are flat arrays
[qw, qx, qy, qz, tx, ty, tz].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_SMALL_ANGLE = 1e-8


def _norm3(v) -> float:
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion."""
    w, qx, qy, qz = q
    vx, vy, vz = v
    # t = 2 * (qv x v), expanded (np.cross overhead dominates hot loops)
    tx = 2.0 * (qy * vz - qz * vy)
    ty = 2.0 * (qz * vx - qx * vz)
    tz = 2.0 * (qx * vy - qy * vx)
    return np.array([
        vx + w * tx + qy * tz - qz * ty,
        vy + w * ty + qz * tx - qx * tz,
        vz + w * tz + qx * ty - qy * tx,
    ])


def rotvec_to_quat(w: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) to unit quaternion."""
    angle = _norm3(w)
    if angle < _SMALL_ANGLE:
        # second-order series keeps the zero-twist round trip exact
        q = np.array([1.0 - angle * angle / 8.0, 0.5 * w[0], 0.5 * w[1], 0.5 * w[2]])
        n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
        return q / n
    axis = w / angle
    s = math.sin(0.5 * angle)
    return np.array([math.cos(0.5 * angle), s * axis[0], s * axis[1], s * axis[2]])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Log map: unit quaternion to rotation vector.

    The sign is canonicalized to a non-negative scalar part first, which
    resolves the double cover and keeps the angle in [0, pi].  The
    atan2 form stays well-conditioned all the way to pi; the series
    branch covers the small-angle end.
    """
    if q[0] < 0.0:
        q = -q
    vec = q[1:]
    sin_half = _norm3(vec)
    if sin_half < _SMALL_ANGLE:
        return 2.0 * vec * (1.0 + sin_half * sin_half / (3.0 * q[0] * q[0])) / q[0]
    angle = 2.0 * math.atan2(sin_half, q[0])
    return vec * (angle / sin_half)


@dataclass
class Pose:
    """Rigid transform: rotation (unit quaternion w,x,y,z) + translation (m)."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4).copy()
        self.translation = np.asarray(self.translation, dtype=float).reshape(3).copy()
        n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
        if not math.isfinite(n) or n < 1e-9:
            raise ValueError("degenerate quaternion")
        self.rotation = q / n

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_rotvec(w, t=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(rotvec_to_quat(np.asarray(w, dtype=float)), np.asarray(t, dtype=float))

    @staticmethod
    def from_array(a) -> "Pose":
        a = np.asarray(a, dtype=float).reshape(7)
        return Pose(a[:4], a[4:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def copy(self) -> "Pose":
        return Pose(self.rotation, self.translation)

    def inverse(self) -> "Pose":
        qc = quat_conj(self.rotation)
        return Pose(qc, -quat_rotate(qc, self.translation))

    def apply(self, point: np.ndarray) -> np.ndarray:
        """Map a point given in this frame into the parent frame."""
        return quat_rotate(self.rotation, np.asarray(point, dtype=float)) + self.translation


@dataclass
class Twist:
    """Spatial velocity: angular (rad/s) and linear (m/s) parts."""

    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))
    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.angular = np.asarray(self.angular, dtype=float).reshape(3).copy()
        self.linear = np.asarray(self.linear, dtype=float).reshape(3).copy()

    @staticmethod
    def zero() -> "Twist":
        return Twist()

    @staticmethod
    def from_array(a) -> "Twist":
        a = np.asarray(a, dtype=float).reshape(6)
        return Twist(a[:3], a[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.angular, self.linear])

    def copy(self) -> "Twist":
        return Twist(self.angular, self.linear)


@dataclass
class Wrench:
    """Force-torque pair: torque (N m) and force (N), tagged with its frame."""

    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frame: str = "base"

    def __post_init__(self):
        self.torque = np.asarray(self.torque, dtype=float).reshape(3).copy()
        self.force = np.asarray(self.force, dtype=float).reshape(3).copy()

    @staticmethod
    def zero(frame: str = "base") -> "Wrench":
        return Wrench(frame=frame)

    @staticmethod
    def from_array(a, frame: str = "base") -> "Wrench":
        a = np.asarray(a, dtype=float).reshape(6)
        return Wrench(a[:3], a[3:], frame)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.torque, self.force])

    def copy(self) -> "Wrench":
        return Wrench(self.torque, self.force, self.frame)

    def __add__(self, other: "Wrench") -> "Wrench":
        if self.frame != other.frame:
            raise ValueError(f"wrench frame mismatch: {self.frame!r} vs {other.frame!r}")
        return Wrench(self.torque + other.torque, self.force + other.force, self.frame)

    def __mul__(self, s: float) -> "Wrench":
        return Wrench(self.torque * s, self.force * s, self.frame)

    __rmul__ = __mul__


def compose(a: Pose, b: Pose) -> Pose:
    """Chain two transforms: the result maps b-frame coordinates through a."""
    q = quat_mul(a.rotation, b.rotation)
    t = a.translation + quat_rotate(a.rotation, b.translation)
    return Pose(q, t)


def apply_displacement(base: Pose, disp: Pose) -> Pose:
    """Add a world-aligned displacement to a pose.

    Translations add componentwise; the rotation displacement left-
    composes (a world-frame rotation change), which is the exponential-
    map reading of "pose plus displacement".
    """
    return Pose(quat_mul(disp.rotation, base.rotation),
                base.translation + disp.translation)


def displacement_between(ref: Pose, x: Pose) -> Pose:
    """World-aligned displacement that carries ref to x (inverse of apply)."""
    return Pose(quat_mul(x.rotation, quat_conj(ref.rotation)),
                x.translation - ref.translation)


def integrate_twist(x: Pose, v: Twist, dt: float) -> Pose:
    """Advance a pose by a world-frame twist over dt seconds."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    dq = rotvec_to_quat(v.angular * dt)
    return Pose(quat_mul(dq, x.rotation), x.translation + v.linear * dt)


def pose_error(desired: Pose, actual: Pose) -> np.ndarray:
    """6-vector [rotation-log; translation difference] of desired relative to actual.

    pose_error(integrate_twist(x, v, 1), x) recovers v for |angular| < pi.
    """
    q_rel = quat_mul(desired.rotation, quat_conj(actual.rotation))
    return np.concatenate([quat_to_rotvec(q_rel), desired.translation - actual.translation])
