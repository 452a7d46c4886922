"""Track Local Map: sequential map gathering plus parallel point association.

Gathering keyframes and points is copy-dominated set work that stays on the
host; the association search inherits the projection-search parallel
contract. Pose refinement afterwards is toggleable (see poseopt).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .buffers import BufferPool
from .cameras import FisheyeCamera, PinholeCamera
from .engine import ExecutionEngine
from .mapping import (Frame, MapPointSoA, WorldMap, NO_POINT,
                      decompose_map_points)
from .projection import ProjectionSearchConfig, search_by_projection


@dataclass
class LocalMap:
    """Keyframes near the current frame and the points they observe.

    ``soa`` is a decomposed snapshot of ``point_ids`` in ascending-id order,
    immutable once built.
    """

    keyframe_ids: tuple[int, ...]
    point_ids: np.ndarray
    soa: MapPointSoA

    def __len__(self) -> int:
        return len(self.point_ids)

    @staticmethod
    def empty() -> "LocalMap":
        return LocalMap((), np.empty(0, dtype=np.int64), MapPointSoA.empty())


def update_local_map(frame: Frame, world: WorldMap,
                     pool: BufferPool | None = None) -> LocalMap:
    """Keyframes observing the frame's map points, then every point those
    keyframes observe; both deduplicated, decomposed once.

    Pure set semantics: the result is invariant to the iteration order of
    the frame's points.
    """
    seed_ids = frame.slotted_point_ids()
    if len(seed_ids) == 0:
        return LocalMap.empty()
    kf_ids: set[int] = set()
    for pid in seed_ids:
        for kf_id, _ in world.points[int(pid)].observations:
            kf_ids.add(kf_id)
    point_ids: set[int] = set()
    for kf_id in kf_ids:
        kf = world.keyframes[kf_id]
        for pid in kf.observed_point_ids():
            point_ids.add(int(pid))
    ordered = np.array(sorted(point_ids), dtype=np.int64)
    points = world.points_by_ids(ordered)
    out = None
    if pool is not None and len(ordered) > 0:
        n = len(ordered)
        out = MapPointSoA(
            positions=pool.acquire("soa_positions", (n, 3), np.float64),
            descriptors=pool.acquire("soa_descriptors", (n, 4), np.uint64),
            normals=pool.acquire("soa_normals", (n, 3), np.float64),
            min_distances=pool.acquire("soa_min_d", (n,), np.float64),
            max_distances=pool.acquire("soa_max_d", (n,), np.float64),
            point_ids=pool.acquire("soa_ids", (n,), np.int64),
        )
    soa = decompose_map_points(points, out=out)
    return LocalMap(tuple(sorted(kf_ids)), ordered, soa)


def search_local_points(local: LocalMap, frame: Frame,
                        cam: PinholeCamera | FisheyeCamera,
                        cfg: ProjectionSearchConfig, scale: float, levels: int,
                        engine: ExecutionEngine | None = None,
                        world: WorldMap | None = None,
                        pool: BufferPool | None = None) -> int:
    """Associate unmatched local points with frame keypoints.

    Points already slotted in the frame are excluded from the search; each
    winning correspondence writes its point id into the frame's keypoint
    slot. Returns the total number of slots filled afterwards.
    """
    if len(local) == 0:
        return int(np.count_nonzero(frame.slots != NO_POINT))
    already = set(int(p) for p in frame.slotted_point_ids())
    skip = np.fromiter(
        (1 if int(pid) in already else 0 for pid in local.point_ids),
        dtype=np.uint8, count=len(local))
    ref_angles = None
    rotation_check = cfg.rotation_check_local
    if rotation_check and world is not None:
        # source angle = the keypoint angle of each point's earliest observation
        ref_angles = np.zeros(len(local))
        for i, pid in enumerate(local.point_ids):
            obs = world.points[int(pid)].observations
            if obs:
                kf_id, slot = min(obs)
                ref_angles[i] = world.keyframes[kf_id].left.angle[slot]
    elif rotation_check:
        rotation_check = False
    corr = search_by_projection(
        local.soa, frame, frame.pose, cam, cfg, scale, levels, engine,
        skip_mask=skip, rotation_check=rotation_check, ref_angles=ref_angles,
        pool=pool)
    for pi, ki in zip(corr.point_idx, corr.keypoint_idx):
        if frame.slots[ki] != NO_POINT:
            continue
        pid = int(local.point_ids[pi])
        frame.slots[ki] = pid
        if world is not None:
            mp = world.points[pid]
            mp.last_seen_frame = frame.frame_id
            mp.tracked_in_view = True
    return int(np.count_nonzero(frame.slots != NO_POINT))
