"""Rigid-body transforms (SO(3)/SE(3)) used throughout the tracking frontend."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHONORMAL_TOL = 1e-9


def nearest_rotation(mat: np.ndarray) -> np.ndarray:
    """Project a near-rotation 3x3 matrix onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(mat)
    rot = u @ vt
    if np.linalg.det(rot) < 0:
        u = u.copy()
        u[:, -1] *= -1.0
        rot = u @ vt
    return rot


def orthonormality_error(rot: np.ndarray) -> float:
    return float(np.abs(rot.T @ rot - np.eye(3)).max())


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues formula: rotation matrix for a rotation vector ``phi``."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = float(np.linalg.norm(phi))
    skew = np.array(
        [
            [0.0, -phi[2], phi[1]],
            [phi[2], 0.0, -phi[0]],
            [-phi[1], phi[0], 0.0],
        ]
    )
    if theta < 1e-12:
        return np.eye(3) + skew
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * skew + b * (skew @ skew)


def rotation_angle(rot: np.ndarray) -> float:
    """Rotation angle in radians of a rotation matrix."""
    c = (np.trace(rot) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform: ``x_cam = rotation @ x_world + translation``.

    ``rotation`` must be orthonormal with determinant +1 (checked to 1e-9).
    Instances are immutable values, safe to share across threads.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if orthonormality_error(rot) > 1e-6 or abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise ValueError("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def matrix(self) -> np.ndarray:
        mat = np.eye(4)
        mat[:3, :3] = self.rotation
        mat[:3, 3] = self.translation
        return mat

    @staticmethod
    def from_matrix(mat: np.ndarray) -> "Pose":
        return Pose(mat[:3, :3], mat[:3, 3])

    def transform(self, pts: np.ndarray) -> np.ndarray:
        """Apply to one point (3,) or a batch (n, 3)."""
        pts = np.asarray(pts, dtype=np.float64)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation

    def to_quaternion(self) -> np.ndarray:
        """Unit quaternion of ``rotation`` as (qx, qy, qz, qw), qw >= 0."""
        return rotation_to_quaternion(self.rotation)

    @staticmethod
    def from_quaternion(quat: np.ndarray, translation: np.ndarray) -> "Pose":
        return Pose(quaternion_to_rotation(quat), translation)


def se3_compose(a: Pose, b: Pose) -> Pose:
    """Transform applying ``b`` then ``a``; re-orthonormalizes on drift > 1e-9."""
    rot = a.rotation @ b.rotation
    trans = a.rotation @ b.translation + a.translation
    if orthonormality_error(rot) > ORTHONORMAL_TOL:
        rot = nearest_rotation(rot)
    return Pose(rot, trans)


def se3_exp(twist: np.ndarray) -> Pose:
    """Exponential of a twist ``[rho, phi]`` (translation part first).

    Uses the SE(3) left Jacobian so that small twists compose consistently
    with the optimizer's left-multiplicative updates.
    """
    twist = np.asarray(twist, dtype=np.float64)
    rho, phi = twist[:3], twist[3:]
    rot = so3_exp(phi)
    theta = float(np.linalg.norm(phi))
    sk = skew(phi)
    if theta < 1e-8:
        jac = np.eye(3) + 0.5 * sk
    else:
        a = (1.0 - np.cos(theta)) / (theta * theta)
        b = (theta - np.sin(theta)) / (theta**3)
        jac = np.eye(3) + a * sk + b * (sk @ sk)
    return Pose(rot, jac @ rho)


def rotation_to_quaternion(rot: np.ndarray) -> np.ndarray:
    """(qx, qy, qz, qw) with qw >= 0."""
    t = np.trace(rot)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        qw = 0.25 * s
        qx = (rot[2, 1] - rot[1, 2]) / s
        qy = (rot[0, 2] - rot[2, 0]) / s
        qz = (rot[1, 0] - rot[0, 1]) / s
    elif rot[0, 0] > rot[1, 1] and rot[0, 0] > rot[2, 2]:
        s = np.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2]) * 2.0
        qw = (rot[2, 1] - rot[1, 2]) / s
        qx = 0.25 * s
        qy = (rot[0, 1] + rot[1, 0]) / s
        qz = (rot[0, 2] + rot[2, 0]) / s
    elif rot[1, 1] > rot[2, 2]:
        s = np.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2]) * 2.0
        qw = (rot[0, 2] - rot[2, 0]) / s
        qx = (rot[0, 1] + rot[1, 0]) / s
        qy = 0.25 * s
        qz = (rot[1, 2] + rot[2, 1]) / s
    else:
        s = np.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1]) * 2.0
        qw = (rot[1, 0] - rot[0, 1]) / s
        qx = (rot[0, 2] + rot[2, 0]) / s
        qy = (rot[1, 2] + rot[2, 1]) / s
        qz = 0.25 * s
    quat = np.array([qx, qy, qz, qw])
    if qw < 0:
        quat = -quat
    return quat / np.linalg.norm(quat)


def quaternion_to_rotation(quat: np.ndarray) -> np.ndarray:
    qx, qy, qz, qw = np.asarray(quat, dtype=np.float64) / np.linalg.norm(quat)
    return np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ]
    )
