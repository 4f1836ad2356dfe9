"""Rigid-transform algebra, pose errors, and polyline resampling.

Rotations are 3x3 matrices throughout; orientation errors are axis-angle
vectors, which keeps the impedance error well defined away from gimbal
singularities. Conversion helpers accept both single rotations and leading
batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this angle, Taylor expansions replace sin/cos ratios.
_SMALL_ANGLE = 1e-10
# Within this margin of pi the skew part of R degenerates; use the diagonal.
_NEAR_PI = 1e-6

DEFAULT_ROTATION_WEIGHT = 0.0025  # m^2/rad^2, ~5 cm per radian equivalence


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector; supports leading batch dims."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rotvec_to_matrix(v: np.ndarray) -> np.ndarray:
    """Exponential map so(3) -> SO(3) via Rodrigues' formula, batched."""
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    vb = np.atleast_2d(v).reshape(-1, 3)
    theta = np.linalg.norm(vb, axis=1)
    theta2 = theta * theta
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = skew(vb)
    K2 = K @ K
    R = np.eye(3) + a[:, None, None] * K + b[:, None, None] * K2
    return R[0] if single else R.reshape(v.shape[:-1] + (3, 3))


def _rotvec_near_pi(R: np.ndarray, theta: float) -> np.ndarray:
    # (R + I)/2 ~ axis outer product when theta ~ pi
    A = (R + np.eye(3)) / 2.0
    k = int(np.argmax(np.diag(A)))
    axis = A[:, k]
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return np.zeros(3)
    axis = axis / n
    # Skew part vanishes exactly at pi; use it to fix the sign just below pi,
    # where either sign is acceptable at pi itself.
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if axis @ w < 0.0:
        axis = -axis
    return theta * axis


def matrix_to_rotvec(R: np.ndarray) -> np.ndarray:
    """Logarithm map SO(3) -> so(3) with angle in [0, pi], batched."""
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    Rb = R.reshape(-1, 3, 3)
    trace = np.einsum("nii->n", Rb)
    cos = np.clip((trace - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    w = np.stack(
        [
            Rb[:, 2, 1] - Rb[:, 1, 2],
            Rb[:, 0, 2] - Rb[:, 2, 0],
            Rb[:, 1, 0] - Rb[:, 0, 1],
        ],
        axis=1,
    )
    out = np.empty((Rb.shape[0], 3))
    small = theta < _SMALL_ANGLE
    near_pi = theta > np.pi - _NEAR_PI
    mid = ~small & ~near_pi
    out[small] = 0.5 * w[small]
    if mid.any():
        scale = theta[mid] / (2.0 * np.sin(theta[mid]))
        out[mid] = scale[:, None] * w[mid]
    if near_pi.any():
        for i in np.flatnonzero(near_pi):
            out[i] = _rotvec_near_pi(Rb[i], theta[i])
    return out[0] if single else out.reshape(R.shape[:-2] + (3,))


def rotation_angle(R_a: np.ndarray, R_b: np.ndarray) -> np.ndarray:
    """Geodesic angle between rotations, in [0, pi]."""
    R_a = np.asarray(R_a, dtype=float)
    R_b = np.asarray(R_b, dtype=float)
    rel = R_a @ np.swapaxes(R_b, -1, -2)
    trace = np.einsum("...ii->...", rel)
    return np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))


def slerp(R_a: np.ndarray, R_b: np.ndarray, s: float) -> np.ndarray:
    """Geodesic interpolation from R_a (s=0) to R_b (s=1)."""
    rel = matrix_to_rotvec(np.asarray(R_b, float) @ np.asarray(R_a, float).T)
    return rotvec_to_matrix(s * rel) @ np.asarray(R_a, float)


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``p_world = rotation @ p_local + position``."""

    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        p.flags.writeable = False
        R.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", R)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.eye(3))

    @staticmethod
    def from_quat(position, quat_wxyz) -> "Pose":
        w, x, y, z = (float(c) for c in quat_wxyz)
        n = np.sqrt(w * w + x * x + y * y + z * z)
        if n < 1e-12:
            raise ValueError("quaternion norm is zero")
        w, x, y, z = w / n, x / n, y / n, z / n
        R = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
            ]
        )
        return Pose(np.asarray(position, dtype=float), R)

    def quat_wxyz(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) with nonnegative w."""
        R = self.rotation
        t = np.trace(R)
        if t > 0:
            s = np.sqrt(t + 1.0) * 2
            q = np.array(
                [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
            )
        elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif R[1, 1] > R[2, 2]:
            s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
        if q[0] < 0:
            q = -q
        return q / np.linalg.norm(q)

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.rotation @ other.position + self.position,
            self.rotation @ other.rotation,
        )

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(-(Rt @ self.position), Rt)

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        """Map local point(s) to the parent frame; accepts (3,) or (..., 3)."""
        p = np.asarray(p, dtype=float)
        return p @ self.rotation.T + self.position


@dataclass(frozen=True)
class Twist:
    """Task-frame velocity: linear (m/s) and angular (rad/s), world frame."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float).reshape(3)
        ang = np.array(self.angular, dtype=float).reshape(3)
        lin.flags.writeable = False
        ang.flags.writeable = False
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(v: np.ndarray) -> "Twist":
        v = np.asarray(v, dtype=float).reshape(6)
        return Twist(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


def pose_error(X_a: Pose, X_b: Pose) -> np.ndarray:
    """6-vector (a minus b): position difference and axis-angle of Ra Rb^T."""
    dp = X_a.position - X_b.position
    drot = matrix_to_rotvec(X_a.rotation @ X_b.rotation.T)
    return np.concatenate([dp, drot])


def se3_distance(X_a: Pose, X_b: Pose, rotation_weight: float = DEFAULT_ROTATION_WEIGHT) -> float:
    """Squared translation plus weighted squared geodesic rotation angle."""
    if rotation_weight <= 0:
        raise ValueError("rotation_weight must be positive")
    dp = X_a.position - X_b.position
    theta = float(rotation_angle(X_a.rotation, X_b.rotation))
    return float(dp @ dp + rotation_weight * theta * theta)


def resample_positions(points, count: int) -> np.ndarray:
    """Resample a polyline to `count` points uniformly spaced by arc length.

    Endpoints are preserved exactly. A single input point (or a zero-length
    polyline) yields `count` copies of it.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("points must be non-empty")
    if count < 2:
        raise ValueError("count must be >= 2")
    if pts.shape[0] == 1:
        return np.repeat(pts, count, axis=0)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total == 0.0:
        return np.repeat(pts[:1], count, axis=0)
    targets = np.linspace(0.0, total, count)
    out = np.stack([np.interp(targets, s, pts[:, k]) for k in range(3)], axis=1)
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out
