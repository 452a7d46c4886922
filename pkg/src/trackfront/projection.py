"""Search by projection: the shared kernel behind initial pose estimation and
local-map point association.

Phase A selects a descriptor-best frame keypoint per projected map point
(data-parallel, one output slot per point). Phase B resolves keypoint
conflicts deterministically on the host, and the optional phase C keeps only
correspondences in the dominant rotation-difference histogram bins. The
split guarantees bit-equal results across backends, which unordered atomic
claiming would not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .cameras import FisheyeCamera, PinholeCamera
from .engine import ExecutionEngine
from .geometry import Pose
from .mapping import Frame, MapPointSoA, WorldMap, NO_POINT, decompose_map_points


@dataclass(frozen=True)
class ProjectionSearchConfig:
    window_px: float = 5.7        # gather half-width at octave 0 (px)
    window_prev_px: float = 15.0  # wider window for previous-frame search
    t_proj: int = 100             # descriptor distance ceiling (bits)
    ratio: float = 0.9            # best/second-best ceiling
    view_cos_min: float = 0.5     # viewing-cone cosine threshold
    histogram_bins: int = 30
    histogram_keep: int = 3
    rotation_check_prev: bool = True
    rotation_check_local: bool = False
    prev_u_offset_px: float = 1.0

    def __post_init__(self) -> None:
        if self.window_px <= 0 or not (0 < self.ratio <= 1):
            raise ValueError("need window_px > 0 and ratio in (0, 1]")
        if not (-1 <= self.view_cos_min <= 1):
            raise ValueError("view_cos_min must be in [-1, 1]")
        if self.histogram_bins < 1 or not (1 <= self.histogram_keep <= self.histogram_bins):
            raise ValueError("need 1 <= histogram_keep <= histogram_bins")


@dataclass
class Correspondences:
    """Resolved point-to-keypoint matches as parallel arrays.

    Injective both ways: each map-point local index and each keypoint index
    appears at most once.
    """

    point_idx: np.ndarray   # (m,) int64, indices into the searched MapPointSoA
    keypoint_idx: np.ndarray  # (m,) int64
    distance: np.ndarray    # (m,) int64
    octave: np.ndarray      # (m,) int64, predicted octave

    def __len__(self) -> int:
        return len(self.point_idx)

    @staticmethod
    def empty() -> "Correspondences":
        z = np.empty(0, dtype=np.int64)
        return Correspondences(z, z.copy(), z.copy(), z.copy())


def predict_scale(distance: float, max_distance: float, scale: float, levels: int) -> int:
    """Pyramid level a point at ``distance`` should appear on.

    clamp(ceil(log(max_distance / distance) / log(scale)), 0, levels - 1);
    the 1e-9 slack keeps exact powers of ``scale`` on their own level.
    """
    r = math.log(max_distance / distance) / math.log(scale)
    return int(min(max(math.ceil(r - 1e-9), 0), levels - 1))


def frustum_and_cone_check(position: np.ndarray, normal: np.ndarray,
                           min_distance: float, max_distance: float,
                           pose: Pose, cam: PinholeCamera | FisheyeCamera,
                           cfg: ProjectionSearchConfig,
                           scale: float, levels: int
                           ) -> tuple[int, float, float, float] | None:
    """Visibility gate for one map point.

    Returns (predicted octave, u, v, viewing cosine) when the point projects
    in bounds with positive depth, its camera-frame distance lies within
    [min_distance, max_distance], and the viewing cosine is >= the config
    threshold; None otherwise.
    """
    p_cam = pose.transform(position)
    if p_cam[2] <= 1e-6:
        return None
    uv = cam.project(p_cam)
    if uv is None:
        return None
    dist = float(np.linalg.norm(p_cam))
    if dist < min_distance or dist > max_distance:
        return None
    center = -pose.rotation.T @ pose.translation
    cosang = float((position - center) @ np.asarray(normal)) / dist
    if cosang < cfg.view_cos_min:
        return None
    octave = predict_scale(dist, max_distance, scale, levels)
    return octave, uv[0], uv[1], cosang


def _camera_args(cam: PinholeCamera | FisheyeCamera) -> tuple:
    if isinstance(cam, PinholeCamera):
        return (0, cam.fx, cam.fy, cam.cx, cam.cy, 0.0, 0.0, 0.0, 0.0,
                float(cam.width), float(cam.height))
    return (1, cam.fx, cam.fy, cam.cx, cam.cy, cam.k1, cam.k2, cam.k3, cam.k4,
            float(cam.width), float(cam.height))


def run_phase_a(points: MapPointSoA, frame: Frame, pose: Pose,
                cam: PinholeCamera | FisheyeCamera,
                cfg: ProjectionSearchConfig, scale: float, levels: int,
                engine: ExecutionEngine,
                skip_mask: np.ndarray | None = None,
                window_px: float | None = None,
                u_offset: float = 0.0,
                pool=None
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-point candidate keypoint, distance, and predicted octave arrays."""
    n = len(points)
    if pool is not None:
        out_kp = pool.acquire("corr_kp", (n,), np.int64)
        out_dist = pool.acquire("corr_dist", (n,), np.int64)
        out_oct = pool.acquire("corr_oct", (n,), np.int64)
    else:
        out_kp = np.empty(n, dtype=np.int64)
        out_dist = np.empty(n, dtype=np.int64)
        out_oct = np.empty(n, dtype=np.int64)
    if n == 0:
        return out_kp, out_dist, out_oct
    if skip_mask is None:
        skip_mask = np.zeros(n, dtype=np.uint8)
    scale_pow = scale ** np.arange(levels, dtype=np.float64)
    grid = frame.grid
    left = frame.left
    window = cfg.window_px if window_px is None else window_px
    cam_args = _camera_args(cam)
    engine.run_chunks(
        n,
        lambda a, b: kernels.project_search_kernel(
            points.positions, points.normals, points.min_distances,
            points.max_distances, points.descriptors, skip_mask,
            pose.rotation, pose.translation,
            *cam_args,
            left.u, left.v, left.octave, left.descriptors,
            grid.start, grid.indices, grid.nx, grid.ny, grid.cell_px,
            scale_pow, levels, 1.0 / math.log(scale),
            window, cfg.t_proj, cfg.ratio, cfg.view_cos_min, u_offset,
            a, b, out_kp, out_dist, out_oct))
    return out_kp, out_dist, out_oct


def resolve_conflicts(out_kp: np.ndarray, out_dist: np.ndarray,
                      out_oct: np.ndarray) -> Correspondences:
    """Phase B: when several points claim one keypoint keep the lowest
    distance (ties: lower point index); losers get no correspondence."""
    claimed = np.nonzero(out_kp >= 0)[0]
    winner: dict[int, int] = {}
    for i in claimed:
        kp = int(out_kp[i])
        prev = winner.get(kp)
        if prev is None or out_dist[i] < out_dist[prev]:
            winner[kp] = int(i)
    points = np.array(sorted(winner.values()), dtype=np.int64)
    return Correspondences(
        point_idx=points,
        keypoint_idx=out_kp[points],
        distance=out_dist[points],
        octave=out_oct[points],
    )


def rotation_consistency_filter(corr: Correspondences, ref_angles: np.ndarray,
                                kp_angles: np.ndarray,
                                cfg: ProjectionSearchConfig) -> Correspondences:
    """Phase C: keep correspondences whose source/matched angle difference
    falls in the K most-populated of B histogram bins (ties: lower bin)."""
    if len(corr) == 0:
        return corr
    diff = (kp_angles[corr.keypoint_idx] - ref_angles[corr.point_idx]) % (2.0 * math.pi)
    bins = np.floor(diff / (2.0 * math.pi) * cfg.histogram_bins).astype(np.int64)
    bins = np.clip(bins, 0, cfg.histogram_bins - 1)
    counts = np.bincount(bins, minlength=cfg.histogram_bins)
    order = sorted(range(cfg.histogram_bins), key=lambda b: (-counts[b], b))
    keep_bins = set(order[:cfg.histogram_keep])
    mask = np.array([b in keep_bins for b in bins])
    return Correspondences(
        point_idx=corr.point_idx[mask],
        keypoint_idx=corr.keypoint_idx[mask],
        distance=corr.distance[mask],
        octave=corr.octave[mask],
    )


def search_by_projection(points: MapPointSoA, frame: Frame, pose: Pose,
                         cam: PinholeCamera | FisheyeCamera,
                         cfg: ProjectionSearchConfig, scale: float, levels: int,
                         engine: ExecutionEngine | None = None,
                         skip_mask: np.ndarray | None = None,
                         ref_angles: np.ndarray | None = None,
                         rotation_check: bool = False,
                         window_px: float | None = None,
                         u_offset: float = 0.0,
                         pool=None) -> Correspondences:
    """Project map points into the frame and resolve the best associations."""
    engine = engine or ExecutionEngine()
    out_kp, out_dist, out_oct = run_phase_a(
        points, frame, pose, cam, cfg, scale, levels, engine,
        skip_mask=skip_mask, window_px=window_px, u_offset=u_offset, pool=pool)
    corr = resolve_conflicts(out_kp, out_dist, out_oct)
    if rotation_check and ref_angles is not None:
        corr = rotation_consistency_filter(corr, ref_angles, frame.left.angle, cfg)
    return corr


def search_prev_frame(prev: Frame, cur: Frame, pose: Pose,
                      world: WorldMap, cam: PinholeCamera | FisheyeCamera,
                      cfg: ProjectionSearchConfig, scale: float, levels: int,
                      engine: ExecutionEngine | None = None,
                      soa_out: MapPointSoA | None = None,
                      pool=None) -> tuple[Correspondences, np.ndarray]:
    """Match the previous frame's map points into the current frame.

    Returns the correspondences plus the array of map-point ids aligned with
    the searched point indices. The search window slides along u by the sign
    of the relative forward translation, and the rotation-consistency check
    runs by default.
    """
    slot_idx = np.nonzero(prev.slots != NO_POINT)[0]
    if len(slot_idx) == 0:
        return Correspondences.empty(), np.empty(0, dtype=np.int64)
    pids = prev.slots[slot_idx]
    mps = world.points_by_ids(pids)
    soa = decompose_map_points(mps, out=soa_out)
    ref_angles = prev.left.angle[slot_idx]

    rel = pose.matrix() @ np.linalg.inv(prev.pose.matrix())
    forward = float(rel[2, 3])
    u_offset = math.copysign(cfg.prev_u_offset_px, forward) if abs(forward) > 1e-9 else 0.0

    corr = search_by_projection(
        soa, cur, pose, cam, cfg, scale, levels, engine,
        ref_angles=ref_angles, rotation_check=cfg.rotation_check_prev,
        window_px=cfg.window_prev_px, u_offset=u_offset, pool=pool)
    return corr, soa.point_ids
