"""Unit-quaternion algebra on SO(3).

Quaternions are numpy arrays ``[w, x, y, z]`` (Hamilton convention).  Rotation
vectors and angular velocities are expressed in the world frame, so a world
frame increment ``delta`` acts on the left: ``boxplus(q, delta) = exp(delta) * q``.
"""

from __future__ import annotations

import math

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

_SMALL_ANGLE = 1e-8


def normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        return IDENTITY.copy()
    q = q / n
    return q if q[0] >= 0.0 else -q


def conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def exp(rotvec):
    """Quaternion of the rotation ``rotvec`` (axis * angle)."""
    v = np.asarray(rotvec, dtype=float)
    theta = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    half = 0.5 * theta
    if theta < _SMALL_ANGLE:
        # sin(x)/x series to second order
        s = 0.5 - theta * theta / 48.0
    else:
        s = math.sin(half) / theta
    return np.array([math.cos(half), s * v[0], s * v[1], s * v[2]])


def log(q):
    """Rotation vector of ``q`` with angle in [0, pi].

    At exactly pi the two candidate axes are equivalent; the one whose first
    nonzero component is non-negative is returned.
    """
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    w = min(q[0], 1.0)
    vn = math.sqrt(q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if vn < _SMALL_ANGLE:
        # 2 * atan2(vn, w) / vn -> 2 / w as vn -> 0
        return (2.0 / w) * q[1:4]
    theta = 2.0 * math.atan2(vn, w)
    axis = q[1:4] / vn
    if w == 0.0:
        for a in axis:
            if a != 0.0:
                if a < 0.0:
                    axis = -axis
                break
    return theta * axis


def boxminus(a, b):
    """Rotation vector taking ``b`` to ``a``: ``log(a * b^-1)``."""
    return log(mul(a, conj(b)))


def boxplus(q, delta):
    return normalize(mul(exp(delta), q))


def to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])


def rotate(q, v):
    return to_matrix(q) @ np.asarray(v, dtype=float)


def from_rpy(roll, pitch, yaw):
    """Quaternion of ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    return normalize(np.array([
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ]))


def to_rpy(q):
    w, x, y, z = q
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    sp = max(-1.0, min(1.0, 2.0 * (w * y - z * x)))
    pitch = math.asin(sp)
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    return np.array([roll, pitch, yaw])


def yaw_quat(yaw):
    return np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)])


def skew(v):
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi
