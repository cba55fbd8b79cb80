"""Quaternion and rigid-transform helpers.

Quaternions are scalar-last ``[x, y, z, w]`` numpy arrays, matching the
``[a, b, c, w]`` wire order used for palm orientations. All angular
quantities are expressed in the world frame unless noted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

IDENTITY_QUAT = np.array([0.0, 0.0, 0.0, 1.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if n == 0.0:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    # v' = v + w*t + qv x t  with  t = 2 * (qv x v)
    qx, qy, qz, qw = q
    tx = 2.0 * (qy * v[2] - qz * v[1])
    ty = 2.0 * (qz * v[0] - qx * v[2])
    tz = 2.0 * (qx * v[1] - qy * v[0])
    return np.array(
        [
            v[0] + qw * tx + (qy * tz - qz * ty),
            v[1] + qw * ty + (qz * tx - qx * tz),
            v[2] + qw * tz + (qx * ty - qy * tx),
        ]
    )


def quat_from_rotvec(r: np.ndarray) -> np.ndarray:
    angle = math.sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    if angle < 1e-12:
        # first-order expansion keeps the map smooth through zero
        return quat_normalize(np.array([0.5 * r[0], 0.5 * r[1], 0.5 * r[2], 1.0]))
    s = math.sin(0.5 * angle) / angle
    return np.array([r[0] * s, r[1] * s, r[2] * s, math.cos(0.5 * angle)])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    if q[3] < 0.0:
        q = -q  # shortest-arc branch
    s = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2])
    if s < 1e-12:
        return np.array([2.0 * q[0], 2.0 * q[1], 2.0 * q[2]])
    angle = 2.0 * math.atan2(s, q[3])
    return np.array([q[0], q[1], q[2]]) * (angle / s)


def quat_integrate(q: np.ndarray, omega: np.ndarray, dt: float) -> np.ndarray:
    """Advance an orientation by a world-frame angular velocity over dt."""
    return quat_normalize(quat_mul(quat_from_rotvec(omega * dt), q))


def orientation_error(q: np.ndarray, q_ref: np.ndarray) -> np.ndarray:
    """Rotation vector taking q_ref to q (zero when aligned)."""
    return quat_to_rotvec(quat_mul(q, quat_conjugate(q_ref)))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotate by quat, then translate by pos."""

    pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quat: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.pos + quat_rotate(self.quat, other.pos), quat_mul(self.quat, other.quat))

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.quat)
        return Pose(-quat_rotate(qi, self.pos), qi)

    def transform(self, point: np.ndarray) -> np.ndarray:
        return self.pos + quat_rotate(self.quat, point)
