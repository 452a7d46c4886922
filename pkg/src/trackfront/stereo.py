"""Stereo correspondence: two-phase pinhole matching (row-band candidates,
then photometric refinement) and one-phase fisheye brute-force matching with
midpoint triangulation.

Both matchers are data-parallel over left keypoints with one private output
slot each, so the sequential and parallel backends agree bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .cameras import FisheyeCamera, PinholeCamera
from .engine import ExecutionEngine
from .extraction import ImagePyramid
from .mapping import FeatureSet


@dataclass(frozen=True)
class StereoMatchConfig:
    t_match: int = 100           # descriptor distance ceiling (bits)
    band_factor: float = 2.0     # row band half-width per octave scale (px)
    min_disparity: float = 0.1
    max_disparity: float = 376.0  # typically width / 2
    half_window: int = 5         # refinement window half-size (px)
    half_slide: int = 5          # refinement slide half-range (px)
    outlier_multiplier: float = 2.0
    ratio: float = 0.8           # fisheye best/second-best ceiling
    ray_gap_ceiling: float = 0.05  # max closest-approach gap (m) for fisheye

    def __post_init__(self) -> None:
        if not (0 < self.t_match <= 256):
            raise ValueError("t_match must be in (0, 256]")
        if self.min_disparity < 0 or self.max_disparity <= self.min_disparity:
            raise ValueError("need 0 <= min_disparity < max_disparity")
        if self.half_window < 1 or self.half_slide < 1:
            raise ValueError("window and slide half-sizes must be >= 1")
        if not (0 < self.ratio <= 1):
            raise ValueError("ratio must be in (0, 1]")


@dataclass
class StereoMatches:
    """Per-left-keypoint stereo results as parallel arrays.

    ``right_idx[i] < 0`` means left keypoint i is unmatched; for matched
    keypoints depth * disparity equals the camera's baseline_times_fx.
    """

    right_idx: np.ndarray   # (n,) int64
    distance: np.ndarray    # (n,) int64
    disparity: np.ndarray   # (n,) float64
    refined_u: np.ndarray   # (n,) float64
    depth: np.ndarray       # (n,) float64
    sad: np.ndarray         # (n,) int64

    def matched_mask(self) -> np.ndarray:
        return self.right_idx >= 0

    def n_matched(self) -> int:
        return int(np.count_nonzero(self.right_idx >= 0))


def build_row_buckets(v: np.ndarray, height: int) -> tuple[np.ndarray, np.ndarray]:
    """CSR buckets of keypoint indices by rounded image row (sequential prepass)."""
    rows = np.clip(np.round(np.asarray(v)).astype(np.int64), 0, height - 1)
    order = np.argsort(rows, kind="stable")
    counts = np.bincount(rows, minlength=height)
    start = np.zeros(height + 1, dtype=np.int64)
    np.cumsum(counts, out=start[1:])
    return start, order.astype(np.int64)


def match_pinhole_phase1(left: FeatureSet, right: FeatureSet, height: int,
                         scale_pow: np.ndarray, cfg: StereoMatchConfig,
                         engine: ExecutionEngine | None = None,
                         row_buckets: tuple[np.ndarray, np.ndarray] | None = None,
                         out_idx: np.ndarray | None = None,
                         out_dist: np.ndarray | None = None
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Best-candidate right index (or -1) and distance per left keypoint."""
    engine = engine or ExecutionEngine()
    n = len(left)
    if row_buckets is None:
        row_buckets = build_row_buckets(right.v, height)
    row_start, row_items = row_buckets
    idx = out_idx if out_idx is not None else np.empty(n, dtype=np.int64)
    dist = out_dist if out_dist is not None else np.empty(n, dtype=np.int64)
    if n == 0:
        return idx, dist
    lu, lv, loct, ldesc = left.u, left.v, left.octave, left.descriptors
    ru, rv, roct, rdesc = right.u, right.v, right.octave, right.descriptors
    engine.run_chunks(
        n,
        lambda a, b: kernels.stereo_phase1_kernel(
            lu, lv, loct, ldesc, ru, rv, roct, rdesc,
            row_start, row_items, scale_pow,
            cfg.band_factor, cfg.min_disparity, cfg.max_disparity, cfg.t_match,
            a, b, idx, dist))
    return idx, dist


def refine_match_phase2(left_pyr: ImagePyramid, right_pyr: ImagePyramid,
                        left: FeatureSet, right: FeatureSet,
                        cand_idx: np.ndarray, cand_dist: np.ndarray,
                        cam: PinholeCamera, cfg: StereoMatchConfig,
                        engine: ExecutionEngine | None = None) -> StereoMatches:
    """Subpixel SAD refinement of phase-1 candidates on their octave levels."""
    engine = engine or ExecutionEngine()
    n = len(left)
    scale_pow = left_pyr.scale ** np.arange(left_pyr.n_levels, dtype=np.float64)
    disp = np.zeros(n)
    ur = np.zeros(n)
    sad = np.zeros(n, dtype=np.int64)
    ok = np.zeros(n, dtype=np.uint8)
    if n:
        engine.run_chunks(
            n,
            lambda a, b: kernels.stereo_phase2_kernel(
                left_pyr.data, left_pyr.offsets, left_pyr.widths, left_pyr.heights,
                right_pyr.data, right_pyr.offsets, right_pyr.widths, right_pyr.heights,
                left.u, left.v, left.octave, right.u, cand_idx, scale_pow,
                cfg.half_window, cfg.half_slide,
                cfg.min_disparity, cfg.max_disparity,
                a, b, disp, ur, sad, ok))
    accepted = ok.astype(bool)
    right_idx = np.where(accepted, cand_idx, -1)
    depth = np.zeros(n)
    depth[accepted] = cam.baseline_times_fx / disp[accepted]
    return StereoMatches(
        right_idx=right_idx,
        distance=np.where(accepted, cand_dist, 10000),
        disparity=np.where(accepted, disp, 0.0),
        refined_u=np.where(accepted, ur, 0.0),
        depth=depth,
        sad=np.where(accepted, sad, 0),
    )


def matches_from_candidates(cand_idx: np.ndarray, cand_dist: np.ndarray,
                            left: FeatureSet, right: FeatureSet,
                            cam: PinholeCamera, cfg: StereoMatchConfig
                            ) -> StereoMatches:
    """Accept phase-1 candidates at their raw disparity, skipping photometric
    refinement. Used when no images exist (feature-level synthetic input)."""
    n = len(cand_idx)
    right_idx = cand_idx.copy()
    disp = np.zeros(n)
    depth = np.zeros(n)
    ur = np.zeros(n)
    m = right_idx >= 0
    disp[m] = left.u[m] - right.u[right_idx[m]]
    bad = m & ((disp < cfg.min_disparity) | (disp > cfg.max_disparity))
    right_idx[bad] = -1
    m = right_idx >= 0
    depth[m] = cam.baseline_times_fx / disp[m]
    ur[m] = right.u[right_idx[m]]
    return StereoMatches(
        right_idx=right_idx,
        distance=np.where(m, cand_dist, 10000),
        disparity=np.where(m, disp, 0.0),
        refined_u=ur,
        depth=np.where(m, depth, 0.0),
        sad=np.zeros(n, dtype=np.int64),
    )


def reject_outliers(matches: StereoMatches, cfg: StereoMatchConfig) -> StereoMatches:
    """Drop matches whose refinement SAD exceeds outlier_multiplier x median.

    The median is taken over matched keypoints only; rejected entries are
    reset to the unmatched state in place.
    """
    m = matches.matched_mask()
    if not m.any():
        return matches
    med = float(np.median(matches.sad[m]))
    bad = m & (matches.sad > cfg.outlier_multiplier * med)
    matches.right_idx[bad] = -1
    matches.distance[bad] = 10000
    matches.disparity[bad] = 0.0
    matches.refined_u[bad] = 0.0
    matches.depth[bad] = 0.0
    matches.sad[bad] = 0
    return matches


def triangulate_rays(origin_a: np.ndarray, dir_a: np.ndarray,
                     origin_b: np.ndarray, dir_b: np.ndarray
                     ) -> np.ndarray | None:
    """Midpoint of the shortest segment between two rays; None when the
    directions are (near-)parallel."""
    pt, _, _, _ = _closest_ray_points(origin_a, dir_a, origin_b, dir_b)
    return pt


def _closest_ray_points(oa, da, ob, db):
    da = np.asarray(da, dtype=np.float64)
    db = np.asarray(db, dtype=np.float64)
    oa = np.asarray(oa, dtype=np.float64)
    ob = np.asarray(ob, dtype=np.float64)
    if np.linalg.norm(np.cross(da, db)) < 1e-9:
        return None, None, None, None
    # solve [da.da  -da.db; da.db  -db.db] [s t]^T = [da.(ob-oa); db.(ob-oa)]
    r = ob - oa
    a11 = da @ da
    a12 = da @ db
    a22 = db @ db
    b1 = da @ r
    b2 = db @ r
    den = a11 * a22 - a12 * a12
    s = (b1 * a22 - a12 * b2) / den
    t = (a11 * b2 - a12 * b1) / den
    pa = oa + s * da
    pb = ob + t * db
    gap = float(np.linalg.norm(pa - pb))
    return (pa + pb) / 2.0, gap, s, t


def match_fisheye(left: FeatureSet, right: FeatureSet, cam: FisheyeCamera,
                  cfg: StereoMatchConfig, engine: ExecutionEngine | None = None
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Brute-force fisheye matching plus ray-midpoint triangulation.

    Returns (left indices, right indices, points, distances) for accepted
    pairs; points are in the left camera frame. Pairs with non-positive
    depth in either camera or a ray gap above the ceiling are rejected.
    """
    engine = engine or ExecutionEngine()
    n = len(left)
    empty = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
             np.empty((0, 3)), np.empty(0, dtype=np.int64))
    if n == 0 or len(right) == 0:
        return empty
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.int64)
    engine.run_chunks(
        n,
        lambda a, b: kernels.bruteforce_match_kernel(
            left.descriptors, right.descriptors, cfg.t_match, cfg.ratio,
            a, b, idx, dist))
    # triangulate accepted pairs; right rays are mapped into the left frame
    t_rl = cam.right_extrinsic
    t_lr = t_rl.inverse()
    left_ids = []
    right_ids = []
    points = []
    dists = []
    for i in np.nonzero(idx >= 0)[0]:
        j = int(idx[i])
        ray_l = cam.unproject(float(left.u[i]), float(left.v[i]))
        ray_r = cam.unproject(float(right.u[j]), float(right.v[j]))
        origin_r = t_lr.translation
        dir_r = t_lr.rotation @ ray_r
        pt, gap, _, _ = _closest_ray_points(np.zeros(3), ray_l, origin_r, dir_r)
        if pt is None or gap is None or gap > cfg.ray_gap_ceiling:
            continue
        p_right = t_rl.transform(pt)
        if pt[2] <= 0 or p_right[2] <= 0:
            continue
        left_ids.append(int(i))
        right_ids.append(j)
        points.append(pt)
        dists.append(int(dist[i]))
    if not left_ids:
        return empty
    return (np.asarray(left_ids, dtype=np.int64),
            np.asarray(right_ids, dtype=np.int64),
            np.asarray(points),
            np.asarray(dists, dtype=np.int64))


def matches_to_csv_rows(matches: StereoMatches) -> list[str]:
    """CSV lines 'left_idx,right_idx,disparity,depth,distance' for matched pairs."""
    rows = []
    for i in np.nonzero(matches.matched_mask())[0]:
        rows.append(
            f"{i},{matches.right_idx[i]},{matches.disparity[i]:.6f},"
            f"{matches.depth[i]:.6f},{matches.distance[i]}")
    return rows
