"""Quaternion and rotation-matrix algebra.

Conventions used throughout the package:

- Quaternions are plain numpy arrays ``[x, y, z, w]`` (scalar last), unit
  norm, composed with the Hamilton product.  The identity rotation is
  ``[0, 0, 0, 1]``.
- ``rot_from_quat(q_BA) @ v_A`` expresses a vector known in frame A in
  frame B coordinates (passive transform).  The matrix map is a
  homomorphism: ``rot_from_quat(q1 * q2) == rot_from_quat(q1) @ rot_from_quat(q2)``.
- Manifold increments are applied on the right: ``q <- q * exp_map(dtheta)``.
"""
from __future__ import annotations

import numpy as np

Array = np.ndarray

QUAT_IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])

# below this rotation angle [rad] the series expansions of exp/log are used
SMALL_ANGLE = 1e-8


def _require_finite(x: Array, name: str) -> Array:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def quat_normalize(q: Array) -> Array:
    """Return q scaled to unit norm.  Raises on zero or non-finite input."""
    q = _require_finite(q, "quaternion")
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("cannot normalize zero quaternion")
    return q / norm


def quat_multiply(q1: Array, q2: Array) -> Array:
    """Hamilton product q1 * q2, scalar-last storage.  Broadcasts over leading dims."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    v1, w1 = q1[..., :3], q1[..., 3:4]
    v2, w2 = q2[..., :3], q2[..., 3:4]
    vec = w1 * v2 + w2 * v1 + np.cross(v1, v2)
    w = w1 * w2 - np.sum(v1 * v2, axis=-1, keepdims=True)
    return np.concatenate([vec, w], axis=-1)


def quat_conjugate(q: Array) -> Array:
    """Inverse rotation for unit quaternions."""
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., :3] = -out[..., :3]
    return out


def rot_from_quat(q: Array) -> Array:
    """3x3 rotation matrix C(q) of a unit quaternion [x, y, z, w].

    C(q) rotates coordinates from the child frame into the parent frame of q.
    """
    q = _require_finite(q, "quaternion")
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
        ],
        axis=-2,
    )


def skew(v: Array) -> Array:
    """Cross-product matrix [v]x with skew(v) @ u == cross(v, u).

    Accepts (..., 3) and returns (..., 3, 3).
    """
    v = _require_finite(v, "vector")
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    zero = np.zeros_like(x)
    return np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )


def exp_map(theta: Array) -> Array:
    """Axis-angle vector [rad] -> unit quaternion, with a small-angle branch."""
    theta = _require_finite(theta, "rotation vector")
    angle = np.linalg.norm(theta, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle < SMALL_ANGLE
    # sin(a/2)/a -> 1/2 - a^2/48 as a -> 0
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / np.where(angle == 0.0, 1.0, angle))
    vec = theta * scale
    w = np.cos(half)
    return quat_normalize(np.concatenate([vec, w], axis=-1))


def log_map(q: Array) -> Array:
    """Unit quaternion -> rotation vector [rad], inverse of exp_map (angle in [0, pi])."""
    q = quat_normalize(q)
    vec = q[..., :3]
    w = q[..., 3:4]
    # force w >= 0 so the returned angle is the geodesic one
    sign = np.where(w < 0.0, -1.0, 1.0)
    vec = vec * sign
    w = w * sign
    norm_vec = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(norm_vec, w)
    small = norm_vec < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small, 2.0, angle / np.where(norm_vec == 0.0, 1.0, norm_vec))
    return vec * scale


def geodesic_angle(q1: Array, q2: Array) -> Array:
    """Rotation angle [rad] between two unit quaternions, sign-of-q invariant."""
    rel = quat_multiply(quat_conjugate(quat_normalize(q1)), quat_normalize(q2))
    vec = np.linalg.norm(rel[..., :3], axis=-1)
    w = np.abs(rel[..., 3])
    return 2.0 * np.arctan2(vec, w)


def quat_from_axis_angle(axis: Array, angle: float) -> Array:
    """Unit quaternion rotating by `angle` [rad] about `axis` (normalized here)."""
    axis = _require_finite(axis, "axis")
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        raise ValueError("rotation axis must be nonzero")
    return exp_map(axis / norm * angle)


def quat_from_euler_xyz(angles: Array) -> Array:
    """Intrinsic X-Y-Z Euler angles [rad] -> quaternion: C = Rx(a) Ry(b) Rz(c)."""
    a, b, c = np.asarray(angles, dtype=float)
    qx = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), a)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), b)
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), c)
    return quat_multiply(qx, quat_multiply(qy, qz))
