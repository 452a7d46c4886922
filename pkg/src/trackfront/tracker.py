"""Per-frame tracking pipeline: extraction, stereo matching, pose prediction
and initial refinement, local-map tracking, keyframe creation, buffer reuse,
and per-stage time/transfer instrumentation.

One logical tracking thread owns all mutable state; data-parallel stages
dispatch through the execution engine and join before the next stage.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .buffers import BufferPool
from .cameras import FisheyeCamera, PinholeCamera
from .engine import (BACKEND_TO_HOST, HOST_TO_BACKEND, BufferHandle,
                     ExecutionEngine, StagingLedger)
from .extraction import ExtractionConfig, extract_features
from .geometry import Pose
from .imu import ImuDelta, ImuSample, predict_pose, preintegrate_imu, relative_motion
from .localmap import search_local_points, update_local_map
from .mapping import (FeatureSet, Frame, FrameGrid, KeyFrame, MapPoint,
                      MapPointSoA, WorldMap, NO_POINT)
from .poseopt import PoseOptConfig, optimize_pose
from .projection import ProjectionSearchConfig, search_prev_frame
from .stereo import (StereoMatchConfig, StereoMatches, build_row_buckets,
                     match_fisheye, match_pinhole_phase1,
                     matches_from_candidates, refine_match_phase2,
                     reject_outliers)
from .synthetic import GRAVITY_W, SyntheticFrame

STAGES = ("orb_extraction", "stereo_match", "initial_pose",
          "update_local_map", "search_local_points", "pose_opt")

STATUS_INITIALIZED = "initialized"
STATUS_INIT_FAILED = "init_failed"
STATUS_OK = "ok"
STATUS_LOST = "lost"


@dataclass(frozen=True)
class TrackerConfig:
    min_track_points: int = 15
    init_min_stereo: int = 50
    keyframe_tracked_ratio: float = 0.9
    keyframe_max_interval: int = 20
    depth_ceiling: float = 0.0       # 0 -> 40 x baseline, resolved at init
    grid_cell_px: int = 48
    use_imu: bool = True
    max_local_points: int = 20000


@dataclass
class FrameInput:
    """One stereo frame: images, or a pre-extracted feature bundle."""

    timestamp: float
    left_image: np.ndarray | None = None
    right_image: np.ndarray | None = None
    features: SyntheticFrame | None = None
    imu: list[ImuSample] = field(default_factory=list)


@dataclass
class StageReport:
    """Per-frame wall time (us) and staged bytes per stage."""

    frame_id: int
    micros: dict[str, int]
    bytes_h2b: dict[str, int]
    bytes_b2h: dict[str, int]
    dropped: bool = False
    n_tracked: int = 0
    status: str = STATUS_OK

    @staticmethod
    def for_dropped(frame_id: int) -> "StageReport":
        zeros = {s: 0 for s in (*STAGES, "total")}
        return StageReport(frame_id, dict(zeros), dict(zeros), dict(zeros),
                           dropped=True, status="dropped")


@dataclass
class TrackResult:
    frame_id: int
    status: str
    pose_cw: Pose
    n_tracked: int
    report: StageReport
    stereo_right_idx: np.ndarray
    stereo_disparity: np.ndarray
    inliers: np.ndarray | None = None


def decide_keyframe(n_tracked: int, ref_count: int, frames_since_kf: int,
                    cfg: TrackerConfig) -> bool:
    """Create when tracking dropped below the reference share, or the
    interval budget is exhausted."""
    if frames_since_kf >= cfg.keyframe_max_interval:
        return True
    return n_tracked < cfg.keyframe_tracked_ratio * ref_count


class StereoTracker:
    def __init__(self, cam: PinholeCamera | FisheyeCamera,
                 extraction: ExtractionConfig | None = None,
                 stereo: StereoMatchConfig | None = None,
                 projection: ProjectionSearchConfig | None = None,
                 pose_opt: PoseOptConfig | None = None,
                 tracker: TrackerConfig | None = None,
                 engine: ExecutionEngine | None = None,
                 residency: bool = True,
                 warmup: bool = True):
        self.cam = cam
        self.extraction = extraction or ExtractionConfig()
        self.stereo = stereo or StereoMatchConfig()
        self.projection = projection or ProjectionSearchConfig()
        self.pose_opt = pose_opt or PoseOptConfig()
        self.cfg = tracker or TrackerConfig()
        self.engine = engine or ExecutionEngine()
        self.ledger = StagingLedger(residency_enabled=residency)
        self.pool = BufferPool()
        self.world = WorldMap()
        # refinement of the predicted pose after previous-frame search is
        # always on, independent of the local-map pose_opt toggle
        self.init_refine = PoseOptConfig(
            enabled=True, max_iterations=10,
            huber_delta=self.pose_opt.huber_delta,
            tolerance=self.pose_opt.tolerance,
            chi2_threshold=self.pose_opt.chi2_threshold)

        self.state = "init"
        self.frame_count = 0
        self.prev_frame: Frame | None = None
        self.prev_pose: Pose | None = None
        self.prev_motion: Pose | None = None
        self.velocity: np.ndarray | None = None
        self.frames_since_kf = 0
        self.ref_kf_count = 0
        self.depth_ceiling = self.cfg.depth_ceiling
        if self.depth_ceiling <= 0:
            if isinstance(cam, PinholeCamera):
                self.depth_ceiling = 40.0 * cam.baseline
            else:
                self.depth_ceiling = 40.0 * float(
                    np.linalg.norm(cam.right_extrinsic.translation)) or 10.0
        self.trajectory_ts: list[float] = []
        self.trajectory_wc: list[Pose] = []
        self.reports: list[StageReport] = []
        self._reserve_buffers()
        if warmup:
            kernels.warmup()

    # -- setup ------------------------------------------------------------

    def _reserve_buffers(self) -> None:
        pool, cfg = self.pool, self.extraction
        w, h = int(self.cam.width), int(self.cam.height)
        powers = cfg.scale_powers()
        ws = np.floor(w / powers).astype(np.int64)
        hs = np.floor(h / powers).astype(np.int64)
        total = int((ws * hs).sum())
        for side in ("left", "right"):
            pool.reserve(f"pyr_{side}", (total,), np.uint8)
            pool.reserve(f"pyr_{side}_smooth", (h, w), np.uint8)
            pool.reserve(f"pyr_{side}_tmp", (h, w), np.int64)
            pool.reserve(f"blur_{side}", (total,), np.int32)
            pool.reserve(f"blur_{side}_tmp", (h, w), np.int64)
            for lvl in range(cfg.levels):
                cap = max(1024, int(ws[lvl] * hs[lvl]) // 8)
                for suffix in ("x", "y", "s"):
                    pool.reserve(f"det_{side}_{suffix}{lvl}", (cap,), np.int64)
            for parity in (0, 1):
                n = cfg.n_features
                pool.reserve(f"feat_{side}{parity}_u", (n,), np.float64)
                pool.reserve(f"feat_{side}{parity}_v", (n,), np.float64)
                pool.reserve(f"feat_{side}{parity}_oct", (n,), np.int32)
                pool.reserve(f"feat_{side}{parity}_ang", (n,), np.float64)
                pool.reserve(f"feat_{side}{parity}_resp", (n,), np.float32)
                pool.reserve(f"feat_{side}{parity}_desc", (n, 4), np.uint64)
        m = self.cfg.max_local_points
        pool.reserve("soa_positions", (m, 3), np.float64)
        pool.reserve("soa_descriptors", (m, 4), np.uint64)
        pool.reserve("soa_normals", (m, 3), np.float64)
        pool.reserve("soa_min_d", (m,), np.float64)
        pool.reserve("soa_max_d", (m,), np.float64)
        pool.reserve("soa_ids", (m,), np.int64)
        n = cfg.n_features
        pool.reserve("prev_soa_positions", (n, 3), np.float64)
        pool.reserve("prev_soa_descriptors", (n, 4), np.uint64)
        pool.reserve("prev_soa_normals", (n, 3), np.float64)
        pool.reserve("prev_soa_min_d", (n,), np.float64)
        pool.reserve("prev_soa_max_d", (n,), np.float64)
        pool.reserve("prev_soa_ids", (n,), np.int64)
        pool.reserve("stereo_idx", (n,), np.int64)
        pool.reserve("stereo_dist", (n,), np.int64)
        pool.reserve("corr_kp", (m,), np.int64)
        pool.reserve("corr_dist", (m,), np.int64)
        pool.reserve("corr_oct", (m,), np.int64)

    def _prev_soa_out(self, n: int) -> MapPointSoA:
        pool = self.pool
        return MapPointSoA(
            positions=pool.acquire("prev_soa_positions", (n, 3), np.float64),
            descriptors=pool.acquire("prev_soa_descriptors", (n, 4), np.uint64),
            normals=pool.acquire("prev_soa_normals", (n, 3), np.float64),
            min_distances=pool.acquire("prev_soa_min_d", (n,), np.float64),
            max_distances=pool.acquire("prev_soa_max_d", (n,), np.float64),
            point_ids=pool.acquire("prev_soa_ids", (n,), np.int64),
        )

    # -- staging helpers ---------------------------------------------------

    def _feature_handles(self, feats: FeatureSet, tag: str) -> list[BufferHandle]:
        kp_bytes = (feats.u.nbytes + feats.v.nbytes + feats.octave.nbytes
                    + feats.angle.nbytes + feats.response.nbytes)
        return [BufferHandle(f"kps_{tag}", kp_bytes),
                BufferHandle(f"desc_{tag}", feats.descriptors.nbytes)]

    # -- tracking ----------------------------------------------------------

    def track_frame(self, inp: FrameInput) -> TrackResult:
        t_start = time.perf_counter_ns()
        frame_id = self.frame_count
        self.frame_count += 1
        ledger = self.ledger
        ledger.begin_frame()
        micros = {s: 0 for s in STAGES}

        if self.state == "lost":
            report = self._finish_report(frame_id, micros, t_start, 0, STATUS_LOST)
            return TrackResult(frame_id, STATUS_LOST,
                               self.prev_pose or Pose.identity(), 0, report,
                               np.empty(0, dtype=np.int64), np.empty(0))

        # ---- extraction ----
        ledger.begin_stage("orb_extraction")
        t0 = time.perf_counter_ns()
        parity = frame_id % 2
        if inp.features is not None:
            left, right = inp.features.left, inp.features.right
            pyr_l = pyr_r = None
        else:
            img_handles = [BufferHandle("img_left", inp.left_image.nbytes),
                           BufferHandle("img_right", inp.right_image.nbytes)]
            for hdl in img_handles:
                ledger.mark_host(hdl)
                ledger.stage(hdl, HOST_TO_BACKEND)
            left, pyr_l = extract_features(
                inp.left_image, self.extraction, self.engine, self.pool,
                name=f"left{parity}")
            right, pyr_r = extract_features(
                inp.right_image, self.extraction, self.engine, self.pool,
                name=f"right{parity}")
            # pyramids are produced backend-side and stay there for reuse
            ledger.mark_backend(BufferHandle("pyr_left", pyr_l.nbytes))
            ledger.mark_backend(BufferHandle("pyr_right", pyr_r.nbytes))
            # keypoints/descriptors come back for the host-side filter
            for feats, tag in ((left, "left"), (right, "right")):
                for hdl in self._feature_handles(feats, tag):
                    ledger.stage(hdl, BACKEND_TO_HOST)
                    ledger.mark_host(hdl)
        micros["orb_extraction"] = (time.perf_counter_ns() - t0) // 1000

        # ---- stereo matching ----
        ledger.begin_stage("stereo_match")
        t0 = time.perf_counter_ns()
        if pyr_l is not None:
            ledger.stage(BufferHandle("pyr_left", pyr_l.nbytes), HOST_TO_BACKEND)
            ledger.stage(BufferHandle("pyr_right", pyr_r.nbytes), HOST_TO_BACKEND)
        for feats, tag in ((left, "left"), (right, "right")):
            for hdl in self._feature_handles(feats, tag):
                if inp.features is not None:
                    ledger.mark_host(hdl)
                ledger.stage(hdl, HOST_TO_BACKEND)
        matches = self._run_stereo(left, right, pyr_l, pyr_r)
        match_bytes = matches.right_idx.nbytes + matches.disparity.nbytes + matches.depth.nbytes
        ledger.stage(BufferHandle("stereo_matches", match_bytes), BACKEND_TO_HOST)
        ledger.mark_host(BufferHandle("stereo_matches", match_bytes))
        micros["stereo_match"] = (time.perf_counter_ns() - t0) // 1000

        depth = np.where(matches.right_idx >= 0, matches.depth, -1.0)
        grid = FrameGrid(left.u, left.v, self.cam.width, self.cam.height,
                         self.cfg.grid_cell_px)
        frame = Frame(frame_id, inp.timestamp, left, right, depth,
                      np.full(len(left), NO_POINT, dtype=np.int64),
                      Pose.identity(), grid)

        if self.state == "init":
            status, n_tracked = self._initialize(frame, matches)
            report = self._finish_report(frame_id, micros, t_start, n_tracked, status)
            return TrackResult(frame_id, status, frame.pose, n_tracked, report,
                               matches.right_idx.copy(), matches.disparity.copy())

        # ---- initial pose estimation ----
        ledger.begin_stage("initial_pose")
        t0 = time.perf_counter_ns()
        status = STATUS_OK
        predicted = self._predict(inp)
        frame.pose = predicted
        soa_out = self._prev_soa_out(
            int(np.count_nonzero(self.prev_frame.slots != NO_POINT)))
        prev_handles = [BufferHandle("prev_soa", soa_out.nbytes),
                        BufferHandle("frame_grid", grid.nbytes)]
        for hdl in prev_handles:
            ledger.mark_host(hdl)
            ledger.stage(hdl, HOST_TO_BACKEND)
        corr, pids = search_prev_frame(
            self.prev_frame, frame, predicted, self.world, self.cam,
            self.projection, self.extraction.scale, self.extraction.levels,
            self.engine, soa_out=soa_out, pool=self.pool)
        inliers = None
        if len(corr) >= self.cfg.min_track_points:
            frame.slots[corr.keypoint_idx] = pids[corr.point_idx]
            pts = np.array([self.world.points[int(p)].position
                            for p in pids[corr.point_idx]])
            obs = np.stack([frame.left.u[corr.keypoint_idx],
                            frame.left.v[corr.keypoint_idx]], axis=1)
            result = optimize_pose(predicted, pts, obs, self.cam, self.init_refine)
            # second round on the chi2 survivors; outliers neither seed
            # keyframes nor carry into the local search
            frame.slots[corr.keypoint_idx[~result.inliers]] = NO_POINT
            keep = result.inliers
            if keep.sum() >= self.cfg.min_track_points and not keep.all():
                result = optimize_pose(result.pose, pts[keep], obs[keep],
                                       self.cam, self.init_refine)
            frame.pose = result.pose
        else:
            status = STATUS_LOST
        micros["initial_pose"] = (time.perf_counter_ns() - t0) // 1000

        n_tracked = int(np.count_nonzero(frame.slots != NO_POINT))
        if status == STATUS_OK:
            # ---- update local map (sequential by design) ----
            ledger.begin_stage("update_local_map")
            t0 = time.perf_counter_ns()
            local = update_local_map(frame, self.world, self.pool)
            micros["update_local_map"] = (time.perf_counter_ns() - t0) // 1000

            # ---- search local points ----
            ledger.begin_stage("search_local_points")
            t0 = time.perf_counter_ns()
            if len(local):
                hdl = BufferHandle("local_soa", local.soa.nbytes)
                ledger.mark_host(hdl)
                ledger.stage(hdl, HOST_TO_BACKEND)
                ledger.stage(BufferHandle("frame_grid", grid.nbytes), HOST_TO_BACKEND)
                for feats, tag in ((left, "left"),):
                    for fh in self._feature_handles(feats, tag):
                        ledger.stage(fh, HOST_TO_BACKEND)
            n_tracked = search_local_points(
                local, frame, self.cam, self.projection, self.extraction.scale,
                self.extraction.levels, self.engine, world=self.world,
                pool=self.pool)
            micros["search_local_points"] = (time.perf_counter_ns() - t0) // 1000

            # ---- optional pose optimization ----
            ledger.begin_stage("pose_opt")
            if self.pose_opt.enabled:
                t0 = time.perf_counter_ns()
                slot_idx = np.nonzero(frame.slots != NO_POINT)[0]
                pts = np.array([self.world.points[int(frame.slots[i])].position
                                for i in slot_idx])
                obs = np.stack([frame.left.u[slot_idx], frame.left.v[slot_idx]],
                               axis=1)
                result = optimize_pose(frame.pose, pts, obs, self.cam, self.pose_opt)
                if result.status not in ("degenerate", "skipped"):
                    frame.pose = result.pose
                    outliers = slot_idx[~result.inliers]
                    frame.slots[outliers] = NO_POINT
                    inliers = result.inliers
                    n_tracked = int(np.count_nonzero(frame.slots != NO_POINT))
                micros["pose_opt"] = (time.perf_counter_ns() - t0) // 1000
            if n_tracked < self.cfg.min_track_points:
                status = STATUS_LOST

        if status == STATUS_OK:
            self.frames_since_kf += 1
            if decide_keyframe(n_tracked, self.ref_kf_count,
                               self.frames_since_kf, self.cfg):
                self._create_keyframe(frame)
            self._update_motion(frame, inp.timestamp)
            self.prev_frame = frame
        else:
            self.state = "lost"

        report = self._finish_report(frame_id, micros, t_start, n_tracked, status)
        return TrackResult(frame_id, status, frame.pose, n_tracked, report,
                           matches.right_idx.copy(), matches.disparity.copy(),
                           inliers=inliers)

    # -- pieces -------------------------------------------------------------

    def _run_stereo(self, left: FeatureSet, right: FeatureSet,
                    pyr_l, pyr_r) -> StereoMatches:
        if isinstance(self.cam, FisheyeCamera):
            lidx, ridx, points, dists = match_fisheye(left, right, self.cam,
                                                      self.stereo, self.engine)
            n = len(left)
            out = StereoMatches(
                right_idx=np.full(n, -1, dtype=np.int64),
                distance=np.full(n, 10000, dtype=np.int64),
                disparity=np.zeros(n),
                refined_u=np.zeros(n),
                depth=np.zeros(n),
                sad=np.zeros(n, dtype=np.int64),
            )
            out.right_idx[lidx] = ridx
            out.distance[lidx] = dists
            out.depth[lidx] = points[:, 2] if len(points) else 0.0
            return out
        scale_pow = self.extraction.scale_powers()
        idx = self.pool.acquire("stereo_idx", (len(left),), np.int64)
        dist = self.pool.acquire("stereo_dist", (len(left),), np.int64)
        idx, dist = match_pinhole_phase1(
            left, right, self.cam.height, scale_pow, self.stereo, self.engine,
            out_idx=idx, out_dist=dist)
        if pyr_l is None:
            matches = matches_from_candidates(idx, dist, left, right,
                                              self.cam, self.stereo)
        else:
            matches = refine_match_phase2(pyr_l, pyr_r, left, right, idx, dist,
                                          self.cam, self.stereo, self.engine)
        return reject_outliers(matches, self.stereo)

    def _predict(self, inp: FrameInput) -> Pose:
        delta: ImuDelta | None = None
        if self.cfg.use_imu and len(inp.imu) >= 2:
            g_body = self.prev_pose.rotation @ GRAVITY_W
            delta = preintegrate_imu(inp.imu, g_body)
        return predict_pose(self.prev_pose, self.velocity, delta,
                            prev_motion=self.prev_motion)

    def _initialize(self, frame: Frame, matches: StereoMatches) -> tuple[str, int]:
        if matches.n_matched() < self.cfg.init_min_stereo:
            return STATUS_INIT_FAILED, 0
        frame.pose = Pose.identity()
        self._create_keyframe(frame)
        self.state = "tracking"
        self.prev_frame = frame
        self.prev_pose = frame.pose
        self.trajectory_ts.append(frame.timestamp)
        self.trajectory_wc.append(frame.pose.inverse())
        return STATUS_INITIALIZED, int(np.count_nonzero(frame.slots != NO_POINT))

    def _back_project(self, u: float, v: float, depth: float) -> np.ndarray:
        if isinstance(self.cam, PinholeCamera):
            return self.cam.back_project(u, v, depth)
        ray = self.cam.unproject(u, v)
        return ray * (depth / ray[2])

    def _create_keyframe(self, frame: Frame) -> None:
        scale = self.extraction.scale
        levels = self.extraction.levels
        t_wc = frame.pose.inverse()
        center = t_wc.translation
        for i in range(frame.n_keypoints):
            if frame.slots[i] != NO_POINT:
                continue
            d = frame.depth[i]
            if d <= 0 or d > self.depth_ceiling:
                continue
            p_cam = self._back_project(float(frame.left.u[i]),
                                       float(frame.left.v[i]), float(d))
            p_world = t_wc.transform(p_cam)
            dist = float(np.linalg.norm(p_cam))
            max_d = dist * scale ** int(frame.left.octave[i])
            min_d = max_d / scale ** (levels - 1)
            normal = (p_world - center) / max(dist, 1e-12)
            mp = MapPoint(
                point_id=self.world.new_point_id(),
                position=p_world,
                descriptor=frame.left.descriptors[i].copy(),
                normal=normal,
                min_distance=min_d,
                max_distance=max_d,
                observations=set(),
                last_seen_frame=frame.frame_id,
            )
            self.world.add_point(mp)
            frame.slots[i] = mp.point_id
        kf = KeyFrame(
            kf_id=self.world.new_keyframe_id(),
            frame_id=frame.frame_id,
            timestamp=frame.timestamp,
            pose=frame.pose,
            left=frame.left.copy(),
            depth=frame.depth.copy(),
            point_ids=frame.slots.copy(),
        )
        self.world.add_keyframe(kf)
        self.ref_kf_count = int(np.count_nonzero(kf.point_ids != NO_POINT))
        self.frames_since_kf = 0

    def _update_motion(self, frame: Frame, timestamp: float) -> None:
        if self.prev_pose is not None and self.prev_frame is not None:
            dt = timestamp - self.prev_frame.timestamp
            if dt > 0:
                c_prev = self.prev_pose.inverse().translation
                c_cur = frame.pose.inverse().translation
                self.velocity = (c_cur - c_prev) / dt
            self.prev_motion = relative_motion(self.prev_pose, frame.pose)
        self.prev_pose = frame.pose
        self.trajectory_ts.append(timestamp)
        self.trajectory_wc.append(frame.pose.inverse())

    def _finish_report(self, frame_id: int, micros: dict[str, int],
                       t_start: int, n_tracked: int, status: str) -> StageReport:
        total = (time.perf_counter_ns() - t_start) // 1000
        times = dict(micros)
        times["total"] = int(total)
        h2b = {}
        b2h = {}
        for stage in (*STAGES, "total"):
            fb = self.ledger.frame_bytes(stage)
            h2b[stage] = fb[0]
            b2h[stage] = fb[1]
        h2b["total"] = sum(h2b[s] for s in STAGES)
        b2h["total"] = sum(b2h[s] for s in STAGES)
        report = StageReport(frame_id, times, h2b, b2h,
                             n_tracked=n_tracked, status=status)
        self.reports.append(report)
        return report

    def trajectory(self):
        from .evaluation import Trajectory
        return Trajectory.from_poses(np.array(self.trajectory_ts), self.trajectory_wc)
