"""Gauss-Newton pose refinement over Huber-robustified reprojection errors.

The update is a 6-vector twist applied multiplicatively on the left, which
avoids rotation-matrix drift. The same routine serves the always-on initial
pose refinement and the toggleable local-map refinement; with
``enabled=False`` the input pose is returned bit-identical and the stage
costs nothing but a flag check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cameras import FisheyeCamera, PinholeCamera
from .geometry import Pose, se3_exp, se3_compose

SKIPPED = "skipped"
CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations"
DEGENERATE = "degenerate"
DISABLED = "disabled"

MIN_ASSOCIATIONS = 6


@dataclass(frozen=True)
class PoseOptConfig:
    enabled: bool = False
    max_iterations: int = 20
    huber_delta: float = math.sqrt(5.991)
    tolerance: float = 1e-6
    chi2_threshold: float = 5.991

    def __post_init__(self) -> None:
        if self.max_iterations < 1 or self.huber_delta <= 0:
            raise ValueError("need max_iterations >= 1 and huber_delta > 0")


def project_points(pose: Pose, points: np.ndarray,
                   cam: PinholeCamera | FisheyeCamera
                   ) -> tuple[np.ndarray, np.ndarray]:
    """(n,2) projections (bounds not enforced) and a positive-depth mask."""
    p_cam = pose.transform(points)
    z = p_cam[:, 2]
    valid = z > 1e-6
    uv = np.zeros((len(points), 2))
    if isinstance(cam, PinholeCamera):
        safe = np.where(valid, z, 1.0)
        uv[:, 0] = cam.fx * p_cam[:, 0] / safe + cam.cx
        uv[:, 1] = cam.fy * p_cam[:, 1] / safe + cam.cy
    else:
        r = np.hypot(p_cam[:, 0], p_cam[:, 1])
        theta = np.arctan2(r, z)
        t2 = theta * theta
        d = theta * (1.0 + t2 * (cam.k1 + t2 * (cam.k2 + t2 * (cam.k3 + t2 * cam.k4))))
        safe_r = np.where(r < 1e-12, 1.0, r)
        uv[:, 0] = np.where(r < 1e-12, cam.cx, cam.fx * d * p_cam[:, 0] / safe_r + cam.cx)
        uv[:, 1] = np.where(r < 1e-12, cam.cy, cam.fy * d * p_cam[:, 1] / safe_r + cam.cy)
    return uv, valid


def reprojection_residuals(pose: Pose, points: np.ndarray, observed: np.ndarray,
                           cam: PinholeCamera | FisheyeCamera) -> np.ndarray:
    """r = projected - observed, (n, 2)."""
    uv, _ = project_points(pose, points, cam)
    return uv - np.asarray(observed, dtype=np.float64)


def reprojection_jacobian(pose: Pose, points: np.ndarray,
                          cam: PinholeCamera | FisheyeCamera) -> np.ndarray:
    """d residual / d twist for a left-multiplicative update, (n, 2, 6).

    Twist layout: [translation, rotation]; d p_cam / d twist = [I  -[p_cam]x].
    """
    p_cam = pose.transform(points)
    n = len(points)
    duv_dp = np.zeros((n, 2, 3))
    if isinstance(cam, PinholeCamera):
        x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
        iz = 1.0 / z
        duv_dp[:, 0, 0] = cam.fx * iz
        duv_dp[:, 0, 2] = -cam.fx * x * iz * iz
        duv_dp[:, 1, 1] = cam.fy * iz
        duv_dp[:, 1, 2] = -cam.fy * y * iz * iz
    else:
        x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
        r2 = x * x + y * y
        r = np.sqrt(np.maximum(r2, 1e-24))
        rho2 = r2 + z * z
        theta = np.arctan2(r, z)
        t2 = theta * theta
        d = theta * (1.0 + t2 * (cam.k1 + t2 * (cam.k2 + t2 * (cam.k3 + t2 * cam.k4))))
        dd_dth = 1.0 + t2 * (3 * cam.k1 + t2 * (5 * cam.k2 + t2 * (7 * cam.k3 + t2 * 9 * cam.k4)))
        # theta = atan2(r, z): dth/dr = z / rho2, dth/dz = -r / rho2
        dth_dx = (z / rho2) * (x / r)
        dth_dy = (z / rho2) * (y / r)
        dth_dz = -r / rho2
        # u = fx * d * x / r + cx
        g = d / r
        dg_dx = (dd_dth * dth_dx * r - d * (x / r)) / r2
        dg_dy = (dd_dth * dth_dy * r - d * (y / r)) / r2
        dg_dz = dd_dth * dth_dz / r
        duv_dp[:, 0, 0] = cam.fx * (g + x * dg_dx)
        duv_dp[:, 0, 1] = cam.fx * x * dg_dy
        duv_dp[:, 0, 2] = cam.fx * x * dg_dz
        duv_dp[:, 1, 0] = cam.fy * y * dg_dx
        duv_dp[:, 1, 1] = cam.fy * (g + y * dg_dy)
        duv_dp[:, 1, 2] = cam.fy * y * dg_dz
    dp_dtwist = np.zeros((n, 3, 6))
    dp_dtwist[:, 0, 0] = 1.0
    dp_dtwist[:, 1, 1] = 1.0
    dp_dtwist[:, 2, 2] = 1.0
    # -[p_cam]x
    dp_dtwist[:, 0, 4] = p_cam[:, 2]
    dp_dtwist[:, 0, 5] = -p_cam[:, 1]
    dp_dtwist[:, 1, 3] = -p_cam[:, 2]
    dp_dtwist[:, 1, 5] = p_cam[:, 0]
    dp_dtwist[:, 2, 3] = p_cam[:, 1]
    dp_dtwist[:, 2, 4] = -p_cam[:, 0]
    return np.einsum("nij,njk->nik", duv_dp, dp_dtwist)


def _huber_weights(res_norm: np.ndarray, delta: float) -> np.ndarray:
    w = np.ones_like(res_norm)
    big = res_norm > delta
    w[big] = delta / res_norm[big]
    return w


def _objective(res: np.ndarray, delta: float) -> float:
    e = np.linalg.norm(res, axis=1)
    quad = e <= delta
    obj = np.where(quad, 0.5 * e * e, delta * (e - 0.5 * delta))
    return float(obj.sum())


@dataclass
class PoseOptResult:
    pose: Pose
    inliers: np.ndarray
    status: str
    iterations: int
    final_objective: float


def optimize_pose(pose: Pose, points: np.ndarray, observed: np.ndarray,
                  cam: PinholeCamera | FisheyeCamera,
                  cfg: PoseOptConfig) -> PoseOptResult:
    """Refine a pose against 3D-point / image-point associations.

    Disabled: returns the input pose object unchanged with nothing flagged.
    Fewer than 6 associations: returns the input pose, status "skipped".
    Accepted iterations never increase the robustified objective; a step
    that would is rolled back and iteration stops.
    """
    n = len(points)
    inliers = np.ones(n, dtype=bool)
    if not cfg.enabled:
        return PoseOptResult(pose, inliers, DISABLED, 0, 0.0)
    if n < MIN_ASSOCIATIONS:
        return PoseOptResult(pose, inliers, SKIPPED, 0, 0.0)
    points = np.asarray(points, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    cur = pose
    res = reprojection_residuals(cur, points, observed, cam)
    obj = _objective(res, cfg.huber_delta)
    status = MAX_ITERATIONS
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        jac = reprojection_jacobian(cur, points, cam)
        e = np.linalg.norm(res, axis=1)
        w = _huber_weights(e, cfg.huber_delta)
        jw = jac * w[:, None, None]
        h = np.einsum("nij,nik->jk", jw, jac)
        b = -np.einsum("nij,ni->j", jw, res)
        try:
            delta = np.linalg.solve(h, b)
        except np.linalg.LinAlgError:
            return PoseOptResult(pose, np.ones(n, dtype=bool), DEGENERATE, it, obj)
        if not np.all(np.isfinite(delta)):
            return PoseOptResult(pose, np.ones(n, dtype=bool), DEGENERATE, it, obj)
        cand = se3_compose(se3_exp(delta), cur)
        cand_res = reprojection_residuals(cand, points, observed, cam)
        cand_obj = _objective(cand_res, cfg.huber_delta)
        if cand_obj > obj:
            break  # reject the step, keep the last accepted pose
        cur, res, obj = cand, cand_res, cand_obj
        if float(np.linalg.norm(delta)) < cfg.tolerance:
            status = CONVERGED
            break
    chi2 = (res * res).sum(axis=1)
    inliers = chi2 <= cfg.chi2_threshold
    return PoseOptResult(cur, inliers, status, it, obj)
