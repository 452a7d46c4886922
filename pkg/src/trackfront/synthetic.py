"""Synthetic stereo(-inertial) scenes with exact ground truth.

Landmarks live on a cylindrical shell around a static, straight-line, or
circular camera path. Every frame is available both as a feature bundle
(ground-truth keypoints with configurable pixel noise, plus per-landmark
descriptors) and, on demand, as rendered images with one distinct textured
dot per landmark. Everything is deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cameras import FisheyeCamera, PinholeCamera
from .descriptors import random_descriptors
from .geometry import Pose
from .imu import ImuSample
from .mapping import FeatureSet

GRAVITY_W = np.array([0.0, 0.0, -9.81])

_DOT_HALF = 7  # rendered dot patch half-size (px)


@dataclass(frozen=True)
class SyntheticSceneConfig:
    landmark_count: int = 1500
    extent: float = 8.0            # workspace diameter (m)
    trajectory: str = "circle"     # static | line | circle
    frame_rate: float = 20.0
    n_frames: int = 200
    image_noise_sigma: float = 0.0  # rendered-image intensity noise
    keypoint_noise_px: float = 0.0  # feature-bundle pixel noise
    imu_rate: float = 200.0
    gyro_noise_sigma: float = 0.0
    accel_noise_sigma: float = 0.0
    circle_radius: float = 1.5
    line_speed: float = 0.2        # m/s along the initial camera x axis
    revolutions: float = 1.0       # circle turns over the whole sequence
    levels: int = 8
    scale: float = 1.2

    def __post_init__(self) -> None:
        if self.landmark_count <= 0 or self.frame_rate <= 0:
            raise ValueError("landmark_count and frame_rate must be positive")
        if self.trajectory not in ("static", "line", "circle"):
            raise ValueError(f"unknown trajectory {self.trajectory!r}")


def default_pinhole() -> PinholeCamera:
    return PinholeCamera(fx=458.0, fy=458.0, cx=376.0, cy=240.0,
                         baseline_times_fx=458.0 * 0.11, width=752, height=480)


@dataclass
class SyntheticFrame:
    """Ground-truth feature bundle for one stereo frame."""

    left: FeatureSet
    right: FeatureSet
    landmark_ids_left: np.ndarray
    landmark_ids_right: np.ndarray
    depth_gt: np.ndarray        # gt z-depth per left keypoint (left camera)
    uv_gt: np.ndarray           # noise-free left projections, (n, 2)


@dataclass
class SyntheticSequence:
    cfg: SyntheticSceneConfig
    cam: PinholeCamera | FisheyeCamera
    timestamps: np.ndarray
    gt_poses: list[Pose]        # camera-in-world (T_wc)
    landmarks: np.ndarray
    landmark_desc: np.ndarray
    landmark_angle: np.ndarray
    frames: list[SyntheticFrame]
    imu: list[ImuSample]
    seed: int

    def __len__(self) -> int:
        return len(self.timestamps)

    def pose_cw(self, i: int) -> Pose:
        return self.gt_poses[i].inverse()

    def imu_slice(self, i: int) -> list[ImuSample]:
        """Samples covering (t_{i-1}, t_i], inclusive of both frame instants."""
        if i == 0:
            return []
        t0, t1 = self.timestamps[i - 1], self.timestamps[i]
        return [s for s in self.imu if t0 - 1e-9 <= s.timestamp <= t1 + 1e-9]

    def gt_velocity(self, i: int) -> np.ndarray:
        return _velocity_world(self.cfg, float(self.timestamps[i]))

    def render_pair(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng((self.seed * 1_000_003 + i) & 0x7FFFFFFF)
        left = _render_view(self, self.pose_cw(i), rng)
        right = _render_view(self, _right_pose_cw(self.cam, self.pose_cw(i)), rng)
        return left, right


def _pose_wc(cfg: SyntheticSceneConfig, t: float) -> Pose:
    """Camera-in-world pose on the configured path."""
    if cfg.trajectory == "circle":
        duration = max(cfg.n_frames - 1, 1) / cfg.frame_rate
        omega = 2.0 * math.pi * cfg.revolutions / duration
        th = omega * t
        r = cfg.circle_radius
        center = np.array([r * math.cos(th), r * math.sin(th), 0.0])
        z_axis = np.array([math.cos(th), math.sin(th), 0.0])
        x_axis = np.array([-math.sin(th), math.cos(th), 0.0])
        y_axis = np.array([0.0, 0.0, 1.0])
    else:
        offset = cfg.line_speed * t if cfg.trajectory == "line" else 0.0
        center = np.array([cfg.circle_radius, offset, 0.0])
        z_axis = np.array([1.0, 0.0, 0.0])
        x_axis = np.array([0.0, 1.0, 0.0])
        y_axis = np.array([0.0, 0.0, 1.0])
    rot_wc = np.stack([x_axis, y_axis, z_axis], axis=1)
    return Pose(rot_wc, center)


def _velocity_world(cfg: SyntheticSceneConfig, t: float) -> np.ndarray:
    if cfg.trajectory == "circle":
        duration = max(cfg.n_frames - 1, 1) / cfg.frame_rate
        omega = 2.0 * math.pi * cfg.revolutions / duration
        th = omega * t
        r = cfg.circle_radius
        return np.array([-r * omega * math.sin(th), r * omega * math.cos(th), 0.0])
    if cfg.trajectory == "line":
        return np.array([0.0, cfg.line_speed, 0.0])
    return np.zeros(3)


def _acceleration_world(cfg: SyntheticSceneConfig, t: float) -> np.ndarray:
    if cfg.trajectory == "circle":
        duration = max(cfg.n_frames - 1, 1) / cfg.frame_rate
        omega = 2.0 * math.pi * cfg.revolutions / duration
        th = omega * t
        r = cfg.circle_radius
        return np.array([-r * omega * omega * math.cos(th),
                         -r * omega * omega * math.sin(th), 0.0])
    return np.zeros(3)


def _right_pose_cw(cam: PinholeCamera | FisheyeCamera, pose_cw: Pose) -> Pose:
    """World-to-right-camera pose given the world-to-left pose."""
    if isinstance(cam, PinholeCamera):
        t_rl = Pose(np.eye(3), np.array([-cam.baseline, 0.0, 0.0]))
    else:
        t_rl = cam.right_extrinsic
    return Pose(t_rl.rotation @ pose_cw.rotation,
                t_rl.rotation @ pose_cw.translation + t_rl.translation)


def _octave_from_distance(dist: np.ndarray, cfg: SyntheticSceneConfig) -> np.ndarray:
    """Coarse appearance scale: closer landmarks land on higher levels."""
    ref = cfg.extent
    oct_f = np.floor(np.log(np.maximum(ref / np.maximum(dist, 1e-6), 1.0))
                     / np.log(cfg.scale))
    return np.clip(oct_f, 0, cfg.levels - 1).astype(np.int32)


def _view_features(seq_cfg: SyntheticSceneConfig,
                   cam: PinholeCamera | FisheyeCamera,
                   pose_cw: Pose, landmarks: np.ndarray,
                   desc: np.ndarray, angles: np.ndarray,
                   rng: np.random.Generator
                   ) -> tuple[FeatureSet, np.ndarray, np.ndarray, np.ndarray]:
    p_cam = pose_cw.transform(landmarks)
    uv, visible = cam.project_many(p_cam)
    ids = np.nonzero(visible)[0]
    uv = uv[ids]
    uv_clean = uv.copy()
    if seq_cfg.keypoint_noise_px > 0:
        uv = uv + rng.normal(0.0, seq_cfg.keypoint_noise_px, size=uv.shape)
    dist = np.linalg.norm(p_cam[ids], axis=1)
    inb = ((uv[:, 0] >= 0) & (uv[:, 0] < cam.width)
           & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height))
    ids, uv, uv_clean, dist = ids[inb], uv[inb], uv_clean[inb], dist[inb]
    feats = FeatureSet(
        u=uv[:, 0].copy(),
        v=uv[:, 1].copy(),
        octave=_octave_from_distance(dist, seq_cfg),
        angle=angles[ids].copy(),
        response=np.full(len(ids), 100.0, dtype=np.float32),
        descriptors=desc[ids].copy(),
    )
    return feats, ids, p_cam[ids][:, 2].copy(), uv_clean


def generate_synthetic(cfg: SyntheticSceneConfig, seed: int,
                       cam: PinholeCamera | FisheyeCamera | None = None
                       ) -> SyntheticSequence:
    """Build the full sequence: ground truth, feature bundles, and IMU."""
    cam = cam or default_pinhole()
    rng = np.random.default_rng(seed)
    # landmarks on a cylindrical shell around the path
    n = cfg.landmark_count
    ang = rng.uniform(0.0, 2.0 * math.pi, n)
    rad = rng.uniform(0.42 * cfg.extent, 0.50 * cfg.extent, n)
    z = rng.uniform(-0.18 * cfg.extent, 0.18 * cfg.extent, n)
    landmarks = np.stack([rad * np.cos(ang), rad * np.sin(ang), z], axis=1)
    desc = random_descriptors(rng, n)
    kp_angle = rng.uniform(0.0, 2.0 * math.pi, n)

    timestamps = np.arange(cfg.n_frames) / cfg.frame_rate
    gt_poses = [_pose_wc(cfg, float(t)) for t in timestamps]

    frames = []
    for i in range(cfg.n_frames):
        pose_cw = gt_poses[i].inverse()
        left, lids, depth, uv_gt = _view_features(
            cfg, cam, pose_cw, landmarks, desc, kp_angle, rng)
        right, rids, _, _ = _view_features(
            cfg, cam, _right_pose_cw(cam, pose_cw), landmarks, desc, kp_angle, rng)
        frames.append(SyntheticFrame(left, right, lids, rids, depth, uv_gt))

    imu = _synthesize_imu(cfg, rng)
    return SyntheticSequence(cfg, cam, timestamps, gt_poses, landmarks, desc,
                             kp_angle, frames, imu, seed)


def _synthesize_imu(cfg: SyntheticSceneConfig,
                    rng: np.random.Generator) -> list[ImuSample]:
    if cfg.imu_rate <= 0:
        return []
    t_end = (cfg.n_frames - 1) / cfg.frame_rate
    n = int(round(t_end * cfg.imu_rate)) + 1
    samples = []
    for k in range(n):
        t = k / cfg.imu_rate
        pose_wc = _pose_wc(cfg, t)
        r_wc = pose_wc.rotation
        if cfg.trajectory == "circle":
            duration = max(cfg.n_frames - 1, 1) / cfg.frame_rate
            omega_w = np.array([0.0, 0.0, 2.0 * math.pi * cfg.revolutions / duration])
        else:
            omega_w = np.zeros(3)
        gyro = r_wc.T @ omega_w
        accel = r_wc.T @ (_acceleration_world(cfg, t) - GRAVITY_W)
        if cfg.gyro_noise_sigma > 0:
            gyro = gyro + rng.normal(0.0, cfg.gyro_noise_sigma, 3)
        if cfg.accel_noise_sigma > 0:
            accel = accel + rng.normal(0.0, cfg.accel_noise_sigma, 3)
        samples.append(ImuSample(float(t), gyro, accel))
    return samples


def _landmark_texture(seed: int, landmark_id: int) -> np.ndarray:
    """Distinct local texture per landmark, fixed across frames."""
    rng = np.random.default_rng((seed * 2_654_435 + landmark_id) & 0x7FFFFFFF)
    size = 2 * _DOT_HALF + 1
    tex = rng.integers(40, 255, size=(size, size)).astype(np.float64)
    yy, xx = np.mgrid[-_DOT_HALF:_DOT_HALF + 1, -_DOT_HALF:_DOT_HALF + 1]
    window = np.exp(-(xx * xx + yy * yy) / (2.0 * (_DOT_HALF / 1.8) ** 2))
    return tex * window


def _render_view(seq: SyntheticSequence, pose_cw: Pose,
                 rng: np.random.Generator) -> np.ndarray:
    cam = seq.cam
    img = np.full((cam.height, cam.width), 15.0)
    p_cam = pose_cw.transform(seq.landmarks)
    uv, visible = cam.project_many(p_cam)
    for lid in np.nonzero(visible)[0]:
        u, v = uv[lid]
        x0 = int(math.floor(u))
        y0 = int(math.floor(v))
        fx_ = u - x0
        fy_ = v - y0
        tex = _landmark_texture(seq.seed, int(lid))
        # bilinear splat of the texture center onto the subpixel position
        size = tex.shape[0]
        canvas = np.zeros((size + 1, size + 1))
        canvas[:size, :size] += tex * (1 - fx_) * (1 - fy_)
        canvas[:size, 1:] += tex * fx_ * (1 - fy_)
        canvas[1:, :size] += tex * (1 - fx_) * fy_
        canvas[1:, 1:] += tex * fx_ * fy_
        ys = y0 - _DOT_HALF
        xs = x0 - _DOT_HALF
        sy0, sy1 = max(0, -ys), min(size + 1, cam.height - ys)
        sx0, sx1 = max(0, -xs), min(size + 1, cam.width - xs)
        if sy1 <= sy0 or sx1 <= sx0:
            continue
        region = img[ys + sy0:ys + sy1, xs + sx0:xs + sx1]
        np.maximum(region, canvas[sy0:sy1, sx0:sx1], out=region)
    if seq.cfg.image_noise_sigma > 0:
        img = img + rng.normal(0.0, seq.cfg.image_noise_sigma, img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)
