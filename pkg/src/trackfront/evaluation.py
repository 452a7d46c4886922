"""Trajectory containers, file IO, association, and ATE/RPE metrics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Pose, quaternion_to_rotation, rotation_to_quaternion


class InsufficientOverlapError(ValueError):
    """Raised when fewer than 3 pose pairs associate between trajectories."""


@dataclass
class Trajectory:
    """Timestamped camera-in-world poses, strictly increasing timestamps."""

    timestamps: np.ndarray   # (n,) seconds
    positions: np.ndarray    # (n, 3)
    quaternions: np.ndarray  # (n, 4) as (qx, qy, qz, qw)

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.quaternions = np.asarray(self.quaternions, dtype=np.float64).reshape(-1, 4)
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    def pose(self, i: int) -> Pose:
        """Camera-in-world pose at index i."""
        return Pose(quaternion_to_rotation(self.quaternions[i]), self.positions[i])

    @staticmethod
    def from_poses(timestamps: np.ndarray, poses_wc: list[Pose]) -> "Trajectory":
        pos = np.array([p.translation for p in poses_wc]).reshape(-1, 3)
        quat = np.array([rotation_to_quaternion(p.rotation) for p in poses_wc]).reshape(-1, 4)
        return Trajectory(np.asarray(timestamps, dtype=np.float64), pos, quat)

    def transformed(self, rot: np.ndarray, trans: np.ndarray,
                    scale: float = 1.0) -> "Trajectory":
        """Apply a global similarity transform to every pose."""
        pos = scale * self.positions @ rot.T + trans
        quats = []
        for q in self.quaternions:
            quats.append(rotation_to_quaternion(rot @ quaternion_to_rotation(q)))
        return Trajectory(self.timestamps.copy(), pos, np.array(quats))


def save_trajectory(path: str | Path, traj: Trajectory) -> None:
    """One line per pose: timestamp tx ty tz qx qy qz qw, space-separated.

    Timestamps use fixed nanosecond precision so that epoch-scale values
    survive the round trip; pose values carry 9 significant digits.
    """
    with open(path, "w") as f:
        for t, p, q in zip(traj.timestamps, traj.positions, traj.quaternions):
            vals = " ".join(f"{x:.9g}" for x in (*p, *q))
            f.write(f"{t:.9f} {vals}\n")


def load_trajectory(path: str | Path) -> Trajectory:
    ts, pos, quat = [], [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            vals = [float(x) for x in parts]
            ts.append(vals[0])
            pos.append(vals[1:4])
            quat.append(vals[4:8])
    return Trajectory(np.array(ts), np.array(pos), np.array(quat))


def associate(t_a: np.ndarray, t_b: np.ndarray, tolerance: float
              ) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-timestamp pairs within tolerance; each b index used once."""
    ia, ib = [], []
    used = set()
    for i, t in enumerate(t_a):
        j = int(np.argmin(np.abs(t_b - t)))
        if abs(t_b[j] - t) <= tolerance and j not in used:
            ia.append(i)
            ib.append(j)
            used.add(j)
    return np.array(ia, dtype=np.int64), np.array(ib, dtype=np.int64)


def umeyama_alignment(src: np.ndarray, dst: np.ndarray, with_scale: bool = False
                      ) -> tuple[np.ndarray, np.ndarray, float]:
    """Closed-form least-squares rigid (optionally similarity) alignment of
    point set ``src`` onto ``dst``: returns (rotation, translation, scale)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / len(src)
    u, d, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    rot = u @ s @ vt
    if with_scale:
        var_s = (xs * xs).sum() / len(src)
        scale = float(np.trace(np.diag(d) @ s) / var_s)
    else:
        scale = 1.0
    trans = mu_d - scale * rot @ mu_s
    return rot, trans, scale


def compute_ate(estimate: Trajectory, reference: Trajectory,
                tolerance: float = 0.01, with_scale: bool = False) -> float:
    """RMSE of translational residuals after rigid alignment (no scale unless
    requested; stereo fixes metric scale)."""
    ia, ib = associate(estimate.timestamps, reference.timestamps, tolerance)
    if len(ia) < 3:
        raise InsufficientOverlapError(
            f"only {len(ia)} associated pose pairs; need at least 3")
    est = estimate.positions[ia]
    ref = reference.positions[ib]
    rot, trans, scale = umeyama_alignment(est, ref, with_scale=with_scale)
    aligned = scale * est @ rot.T + trans
    resid = aligned - ref
    return float(np.sqrt((resid * resid).sum(axis=1).mean()))


def compute_rpe(estimate: Trajectory, reference: Trajectory,
                delta: int = 1, tolerance: float = 0.01) -> float:
    """RMSE of relative translation errors over index gaps of ``delta``."""
    ia, ib = associate(estimate.timestamps, reference.timestamps, tolerance)
    if len(ia) < 3:
        raise InsufficientOverlapError(
            f"only {len(ia)} associated pose pairs; need at least 3")
    errs = []
    for k in range(len(ia) - delta):
        p0 = estimate.pose(int(ia[k])).matrix()
        p1 = estimate.pose(int(ia[k + delta])).matrix()
        q0 = reference.pose(int(ib[k])).matrix()
        q1 = reference.pose(int(ib[k + delta])).matrix()
        rel_q = np.linalg.inv(q0) @ q1
        rel_p = np.linalg.inv(p0) @ p1
        err = np.linalg.inv(rel_q) @ rel_p
        errs.append(err[:3, 3])
    errs = np.asarray(errs)
    return float(np.sqrt((errs * errs).sum(axis=1).mean()))
