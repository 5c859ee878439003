"""Rotation, quaternion and distance helpers shared across the simulator.

Quaternions are stored as (w, x, y, z), unit norm, and rotate body-frame
vectors into the world frame.
"""

from __future__ import annotations

import numpy as np


def rot_z(angle: float) -> np.ndarray:
    """Rotation matrix about the world z axis."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix; `axis` must be unit length."""
    a = np.asarray(axis, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    k = np.array(
        [[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]]
    )
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n < 1e-15:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if n < 1e-15:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], np.sin(half) * a / n))


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


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


def quat_integrate(q: np.ndarray, omega_world: np.ndarray, dt: float) -> np.ndarray:
    """Advance orientation by a constant world-frame angular velocity."""
    ang = float(np.linalg.norm(omega_world)) * dt
    if ang < 1e-14:
        return quat_normalize(q)
    dq = quat_from_axis_angle(np.asarray(omega_world, dtype=float), ang)
    return quat_normalize(quat_mul(dq, q))


def point_segment_closest(p: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Closest point on segment ab to p.

    Returns (distance, closest point, segment parameter in [0, 1]).
    """
    d = b - a
    dd = float(d @ d)
    if dd < 1e-18:
        c = a
        s = 0.0
    else:
        s = float(np.clip((p - a) @ d / dd, 0.0, 1.0))
        c = a + s * d
    return float(np.linalg.norm(p - c)), c, s


def angle_between(u: np.ndarray, v: np.ndarray) -> float:
    """Angle in radians between two vectors (safe near parallel)."""
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < 1e-15 or nv < 1e-15:
        return 0.0
    c = float(np.clip(u @ v / (nu * nv), -1.0, 1.0))
    return float(np.arccos(c))
