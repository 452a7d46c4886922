"""Camera models: rectified pinhole stereo and Kannala-Brandt fisheye."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose

MIN_PROJECT_DEPTH = 1e-6


class InvalidDisparityError(ValueError):
    """Raised for non-positive disparities."""


@dataclass(frozen=True)
class PinholeCamera:
    """Rectified stereo pinhole pair; epipolar lines are image rows.

    ``baseline_times_fx`` is the stereo baseline times fx (pixel * meters),
    so depth = baseline_times_fx / disparity.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    baseline_times_fx: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0 or self.baseline_times_fx <= 0:
            raise ValueError("focal lengths and baseline_times_fx must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    @property
    def baseline(self) -> float:
        return self.baseline_times_fx / self.fx

    def project(self, p_cam: np.ndarray) -> tuple[float, float] | None:
        """Image point for a camera-frame point, or None when not visible."""
        x, y, z = float(p_cam[0]), float(p_cam[1]), float(p_cam[2])
        if z <= MIN_PROJECT_DEPTH:
            return None
        u = self.fx * x / z + self.cx
        v = self.fy * y / z + self.cy
        if not (0.0 <= u < self.width and 0.0 <= v < self.height):
            return None
        return (u, v)

    def project_many(self, pts_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized projection: (n,2) image points and an (n,) visibility mask."""
        pts = np.asarray(pts_cam, dtype=np.float64)
        z = pts[:, 2]
        safe_z = np.where(z > MIN_PROJECT_DEPTH, z, 1.0)
        uv = np.empty((len(pts), 2))
        uv[:, 0] = self.fx * pts[:, 0] / safe_z + self.cx
        uv[:, 1] = self.fy * pts[:, 1] / safe_z + self.cy
        visible = (
            (z > MIN_PROJECT_DEPTH)
            & (uv[:, 0] >= 0.0)
            & (uv[:, 0] < self.width)
            & (uv[:, 1] >= 0.0)
            & (uv[:, 1] < self.height)
        )
        return uv, visible

    def back_project(self, u: float, v: float, depth: float) -> np.ndarray:
        """Camera-frame point at the given pixel and depth (z = depth)."""
        return np.array(
            [(u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth]
        )


@dataclass(frozen=True)
class FisheyeCamera:
    """Kannala-Brandt fisheye: r(theta) = theta + k1 th^3 + k2 th^5 + k3 th^7 + k4 th^9.

    ``right_extrinsic`` maps left-camera coordinates into the right camera
    (calibrated, never estimated here).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float
    k2: float
    k3: float
    k4: float
    width: int
    height: int
    right_extrinsic: Pose = field(default_factory=Pose.identity)

    def _distort(self, theta: float) -> float:
        t2 = theta * theta
        return theta * (1.0 + t2 * (self.k1 + t2 * (self.k2 + t2 * (self.k3 + t2 * self.k4))))

    def project(self, p_cam: np.ndarray) -> tuple[float, float] | None:
        x, y, z = float(p_cam[0]), float(p_cam[1]), float(p_cam[2])
        r = np.hypot(x, y)
        if r < 1e-12:
            if z <= 0.0:
                return None
            return (self.cx, self.cy)
        theta = np.arctan2(r, z)
        d = self._distort(theta)
        u = self.fx * d * x / r + self.cx
        v = self.fy * d * y / r + self.cy
        if not (0.0 <= u < self.width and 0.0 <= v < self.height):
            return None
        return (float(u), float(v))

    def project_many(self, pts_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(pts_cam, dtype=np.float64)
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        r = np.hypot(x, y)
        theta = np.arctan2(r, z)
        t2 = theta * theta
        d = theta * (1.0 + t2 * (self.k1 + t2 * (self.k2 + t2 * (self.k3 + t2 * self.k4))))
        on_axis = r < 1e-12
        safe_r = np.where(on_axis, 1.0, r)
        uv = np.empty((len(pts), 2))
        uv[:, 0] = np.where(on_axis, self.cx, self.fx * d * x / safe_r + self.cx)
        uv[:, 1] = np.where(on_axis, self.cy, self.fy * d * y / safe_r + self.cy)
        visible = (
            (uv[:, 0] >= 0.0)
            & (uv[:, 0] < self.width)
            & (uv[:, 1] >= 0.0)
            & (uv[:, 1] < self.height)
            & (~on_axis | (z > 0.0))
        )
        return uv, visible

    def unproject(self, u: float, v: float) -> np.ndarray:
        """Unit ray through a pixel (Newton inversion of the radial polynomial)."""
        mx = (u - self.cx) / self.fx
        my = (v - self.cy) / self.fy
        rd = float(np.hypot(mx, my))
        if rd < 1e-12:
            return np.array([0.0, 0.0, 1.0])
        theta = min(rd, np.pi / 2)
        for _ in range(20):
            t2 = theta * theta
            f = theta * (1.0 + t2 * (self.k1 + t2 * (self.k2 + t2 * (self.k3 + t2 * self.k4)))) - rd
            df = 1.0 + t2 * (3 * self.k1 + t2 * (5 * self.k2 + t2 * (7 * self.k3 + t2 * 9 * self.k4)))
            step = f / df
            theta -= step
            if abs(step) < 1e-14:
                break
        s = np.sin(theta) / rd
        ray = np.array([s * mx, s * my, np.cos(theta)])
        return ray / np.linalg.norm(ray)


def stereo_depth_from_disparity(cam: PinholeCamera, disparity: float) -> float:
    """Depth in meters for a positive disparity in pixels."""
    if disparity <= 0.0:
        raise InvalidDisparityError(f"disparity must be positive, got {disparity}")
    return cam.baseline_times_fx / disparity
