"""Quaternion-based SO(3) utilities and discrete rotational kinematics.

Conventions
-----------
- Quaternions are stored ``(w, x, y, z)`` in the last axis of a float64 array.
  Every function accepts batches of any leading shape.
- ``q`` and ``-q`` are the same rotation. :func:`canonicalize` picks ``w >= 0``;
  when ``w == 0`` the first nonzero component is made positive.
- Axis-angle vectors have direction = axis and norm = angle in radians.
- Time is measured in frames. ``frame_interval`` is the spacing between
  consecutive samples in frame units (1 by default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError

__all__ = [
    "IDENTITY",
    "RotationSequence",
    "angular_acceleration",
    "angular_jerk",
    "angular_velocity",
    "canonicalize",
    "exp_map",
    "log_map",
    "normalize",
    "pose_to_reference",
    "quat_conj",
    "quat_mul",
    "relative_rotation",
]

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

# Below this angle both maps switch to a Taylor expansion.
_SMALL_ANGLE = 1e-4


def normalize(q):
    """Unit quaternion(s); inputs already unit to within 1e-15 pass through untouched."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return np.where(np.abs(n - 1.0) <= 1e-15, q, q / n)


def canonicalize(q):
    """Normalize ``q`` and flip its sign so the rotation has a unique representative."""
    q = normalize(q)
    nonzero = q != 0.0
    # index of the first nonzero component (w first)
    first = np.argmax(nonzero, axis=-1)
    lead = np.take_along_axis(q, first[..., None], axis=-1)
    return np.where(lead < 0.0, -q, q)


def quat_conj(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a, b):
    """Hamilton product ``a * b`` (apply ``b`` first, then ``a``)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            # mirrored terms are paired so conj(q) * q cancels exactly
            (aw * bx + ax * bw) + (ay * bz - az * by),
            (aw * by + ay * bw) + (az * bx - ax * bz),
            (aw * bz + az * bw) + (ax * by - ay * bx),
        ],
        axis=-1,
    )
    return normalize(out)


def exp_map(v):
    """Axis-angle vector(s) to unit quaternion(s)."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    # sin(theta/2)/theta, Taylor: 1/2 - theta^2/48
    k = np.where(small, 0.5 - theta**2 / 48.0, np.sin(0.5 * safe) / safe)
    w = np.where(small, 1.0 - theta**2 / 8.0, np.cos(0.5 * safe))
    return canonicalize(np.concatenate([w, k * v], axis=-1))


def log_map(q):
    """Unit quaternion(s) to axis-angle vector(s) with angle in ``[0, pi]``.

    The angle is recovered with ``atan2(|xyz|, w)`` on the canonical quaternion,
    which stays well conditioned at both ends of the range.
    """
    q = canonicalize(q)
    w = q[..., :1]
    xyz = q[..., 1:]
    s = np.linalg.norm(xyz, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    small = angle < _SMALL_ANGLE
    safe_s = np.where(small, 1.0, s)
    safe_w = np.where(small, w, 1.0)
    # 2*atan2(s, w)/s ~ (2/w)(1 - s^2/(3 w^2)) near the identity
    scale = np.where(
        small,
        (2.0 / safe_w) * (1.0 - s**2 / (3.0 * safe_w**2)),
        angle / safe_s,
    )
    return scale * xyz


def relative_rotation(a, b):
    """Canonical quaternion of ``a^{-1} b``."""
    return canonicalize(quat_mul(quat_conj(a), b))


@dataclass(frozen=True)
class RotationSequence:
    """Per-joint orientations over time.

    Parameters
    ----------
    data : array of shape (T, J, 4)
        Quaternions, normalized and canonicalized on construction.
    frame_interval : float
        Sample spacing in frames.
    """

    data: np.ndarray
    frame_interval: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[-1] != 4:
            raise DimensionError(f"expected a (T, J, 4) quaternion array, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionError(f"need T >= 1 and J >= 1, got T={data.shape[0]}, J={data.shape[1]}")
        if not np.all(np.isfinite(data)):
            raise ValueError("rotation data contains non-finite values")
        if not self.frame_interval > 0:
            raise ValueError(f"frame_interval must be positive, got {self.frame_interval}")
        data = canonicalize(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "frame_interval", float(self.frame_interval))

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_joints(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.n_frames


def pose_to_reference(seq: RotationSequence, ref) -> np.ndarray:
    """Axis-angle of each joint relative to its reference orientation, shape (T, J, 3)."""
    ref = np.asarray(ref, dtype=np.float64)
    if ref.shape != (seq.n_joints, 4):
        raise DimensionError(
            f"reference must have shape ({seq.n_joints}, 4) to match the sequence, got {ref.shape}"
        )
    # same normalization as the sequence, so equal rotations give exact zeros
    return log_map(relative_rotation(canonicalize(ref)[None], seq.data))


def angular_velocity(seq: RotationSequence) -> np.ndarray:
    """Inter-frame angular velocity, shape (T, J, 3); frame 0 is zero."""
    out = np.zeros(seq.data.shape[:2] + (3,))
    if seq.n_frames > 1:
        rel = relative_rotation(seq.data[:-1], seq.data[1:])
        out[1:] = log_map(rel) / seq.frame_interval
    return out


def _frame_difference(x, frame_interval):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    out[1:] = (x[1:] - x[:-1]) / frame_interval
    return out


def angular_acceleration(omega, frame_interval: float = 1.0) -> np.ndarray:
    """Backward difference of angular velocity along axis 0; frame 0 is zero."""
    return _frame_difference(omega, frame_interval)


def angular_jerk(alpha, frame_interval: float = 1.0) -> np.ndarray:
    """Backward difference of angular acceleration along axis 0; frame 0 is zero."""
    return _frame_difference(alpha, frame_interval)
