"""Inertial preintegration and pose prediction.

Samples between two frames are compressed into one relative-motion
increment by midpoint integration; gravity is compensated in the initial
body frame. Here the body frame is taken to be the camera frame (no
camera-IMU extrinsic), which is sufficient for the synthetic streams and
the prediction role this frontend gives the IMU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, so3_exp


class ImuStreamError(ValueError):
    """Raised for non-monotonic sample timestamps."""


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    angular_velocity: np.ndarray  # rad/s, body frame
    acceleration: np.ndarray      # m/s^2, specific force, body frame


@dataclass(frozen=True)
class ImuDelta:
    """Preintegrated motion over a window, in the initial body frame."""

    rotation: np.ndarray   # (3,3) body0 -> body1
    velocity: np.ndarray   # (3,) gravity-compensated velocity change
    position: np.ndarray   # (3,) displacement beyond initial-velocity coasting
    duration: float


def preintegrate_imu(samples: list[ImuSample], gravity: np.ndarray) -> ImuDelta:
    """Midpoint integration of rotation and gravity-compensated acceleration.

    ``gravity`` must be expressed in the initial body frame. Zero or one
    sample yields identity/zero deltas.
    """
    gravity = np.asarray(gravity, dtype=np.float64)
    if len(samples) < 2:
        return ImuDelta(np.eye(3), np.zeros(3), np.zeros(3), 0.0)
    times = [s.timestamp for s in samples]
    if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
        raise ImuStreamError("sample timestamps must be strictly increasing")
    rot = np.eye(3)
    vel = np.zeros(3)
    pos = np.zeros(3)
    for s0, s1 in zip(samples, samples[1:]):
        dt = s1.timestamp - s0.timestamp
        w_mid = 0.5 * (np.asarray(s0.angular_velocity) + np.asarray(s1.angular_velocity))
        a_mid = 0.5 * (np.asarray(s0.acceleration) + np.asarray(s1.acceleration))
        rot_half = rot @ so3_exp(w_mid * (dt / 2.0))
        a_world = rot_half @ a_mid + gravity
        pos = pos + vel * dt + 0.5 * a_world * dt * dt
        vel = vel + a_world * dt
        rot = rot @ so3_exp(w_mid * dt)
    return ImuDelta(rot, vel, pos, times[-1] - times[0])


def predict_pose(prev_pose: Pose, prev_velocity: np.ndarray | None,
                 imu_delta: ImuDelta | None,
                 prev_motion: Pose | None = None,
                 dt: float = 0.0) -> Pose:
    """Predicted world-to-camera pose for the next frame.

    With an IMU delta the previous pose is composed with the preintegrated
    motion (plus initial-velocity coasting); without one, the constant
    velocity model re-applies ``prev_motion`` (the previous inter-frame
    world-to-camera increment). With neither, the pose is unchanged.
    """
    if imu_delta is not None and imu_delta.duration > 0:
        t_wc = prev_pose.inverse()
        r_wc = t_wc.rotation
        vel = np.zeros(3) if prev_velocity is None else np.asarray(prev_velocity)
        center = t_wc.translation + vel * imu_delta.duration + r_wc @ imu_delta.position
        r_new = r_wc @ imu_delta.rotation
        return Pose(r_new, center).inverse()
    if prev_motion is not None:
        return Pose(prev_motion.rotation @ prev_pose.rotation,
                    prev_motion.rotation @ prev_pose.translation + prev_motion.translation)
    return prev_pose


def relative_motion(prev: Pose, cur: Pose) -> Pose:
    """World-to-camera increment m with cur = m o prev."""
    inv = prev.inverse()
    return Pose(cur.rotation @ inv.rotation,
                cur.rotation @ inv.translation + cur.translation)
