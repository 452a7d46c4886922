"""Frames, keyframes, map points, and the flat decomposed layout for parallel stages."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import Pose

NO_DEPTH = -1.0
NO_POINT = -1

DEFAULT_GRID_CELL_PX = 48


@dataclass
class FeatureSet:
    """Per-image keypoints and descriptors as parallel arrays.

    Coordinates are subpixel, in the level-0 frame of reference; ``octave``
    is the pyramid level each keypoint was detected on.
    """

    u: np.ndarray
    v: np.ndarray
    octave: np.ndarray
    angle: np.ndarray
    response: np.ndarray
    descriptors: np.ndarray

    def __len__(self) -> int:
        return len(self.u)

    @staticmethod
    def empty() -> "FeatureSet":
        return FeatureSet(
            u=np.empty(0),
            v=np.empty(0),
            octave=np.empty(0, dtype=np.int32),
            angle=np.empty(0),
            response=np.empty(0, dtype=np.float32),
            descriptors=np.zeros((0, 4), dtype=np.uint64),
        )

    def take(self, idx: np.ndarray) -> "FeatureSet":
        return FeatureSet(
            u=self.u[idx],
            v=self.v[idx],
            octave=self.octave[idx],
            angle=self.angle[idx],
            response=self.response[idx],
            descriptors=self.descriptors[idx],
        )

    def copy(self) -> "FeatureSet":
        return FeatureSet(
            u=self.u.copy(),
            v=self.v.copy(),
            octave=self.octave.copy(),
            angle=self.angle.copy(),
            response=self.response.copy(),
            descriptors=self.descriptors.copy(),
        )


class FrameGrid:
    """CSR index of keypoint indices over fixed square cells at level-0 scale.

    Bounds windowed candidate lookup in the projection searches; every
    keypoint index appears in exactly one cell list.
    """

    def __init__(self, u: np.ndarray, v: np.ndarray, width: int, height: int,
                 cell_px: int = DEFAULT_GRID_CELL_PX):
        self.cell_px = int(cell_px)
        self.nx = max(1, (int(width) + self.cell_px - 1) // self.cell_px)
        self.ny = max(1, (int(height) + self.cell_px - 1) // self.cell_px)
        n = len(u)
        cx = np.clip((np.asarray(u) / self.cell_px).astype(np.int64), 0, self.nx - 1)
        cy = np.clip((np.asarray(v) / self.cell_px).astype(np.int64), 0, self.ny - 1)
        cell = cy * self.nx + cx
        order = np.argsort(cell, kind="stable")
        self.indices = order.astype(np.int64)
        counts = np.bincount(cell, minlength=self.nx * self.ny)
        self.start = np.zeros(self.nx * self.ny + 1, dtype=np.int64)
        np.cumsum(counts, out=self.start[1:])
        self._n = n

    def __len__(self) -> int:
        return self._n

    def cell_indices(self, cx: int, cy: int) -> np.ndarray:
        c = cy * self.nx + cx
        return self.indices[self.start[c]:self.start[c + 1]]

    @property
    def nbytes(self) -> int:
        return self.indices.nbytes + self.start.nbytes


@dataclass
class Frame:
    """Per-image bundle flowing through the pipeline.

    ``depth[i]`` is the stereo depth of left keypoint i (NO_DEPTH sentinel when
    unmatched); ``slots[i]`` holds the id of the map point associated with left
    keypoint i (NO_POINT when empty). Mutated only by the tracking thread.
    """

    frame_id: int
    timestamp: float
    left: FeatureSet
    right: FeatureSet
    depth: np.ndarray
    slots: np.ndarray
    pose: Pose
    grid: FrameGrid

    @property
    def n_keypoints(self) -> int:
        return len(self.left)

    def slotted_point_ids(self) -> np.ndarray:
        """Ids of map points currently associated to this frame, ascending."""
        ids = self.slots[self.slots != NO_POINT]
        return np.unique(ids)


@dataclass
class KeyFrame:
    """Retained snapshot of a frame plus the map points it anchors."""

    kf_id: int
    frame_id: int
    timestamp: float
    pose: Pose
    left: FeatureSet
    depth: np.ndarray
    point_ids: np.ndarray  # per keypoint slot, NO_POINT when empty

    def observed_point_ids(self) -> np.ndarray:
        ids = self.point_ids[self.point_ids != NO_POINT]
        return np.unique(ids)


@dataclass
class MapPoint:
    """3D landmark with a representative descriptor and observation links."""

    point_id: int
    position: np.ndarray
    descriptor: np.ndarray
    normal: np.ndarray
    min_distance: float
    max_distance: float
    observations: set[tuple[int, int]] = field(default_factory=set)
    last_seen_frame: int = -1
    tracked_in_view: bool = False


@dataclass
class MapPointSoA:
    """Decomposed snapshot of map points as flat parallel arrays.

    Entry i of every array describes the same map point; the layout feeds the
    data-parallel search stages without touching the linked structures.
    """

    positions: np.ndarray      # (n, 3) float64
    descriptors: np.ndarray    # (n, 4) uint64
    normals: np.ndarray        # (n, 3) float64
    min_distances: np.ndarray  # (n,) float64
    max_distances: np.ndarray  # (n,) float64
    point_ids: np.ndarray      # (n,) int64

    def __len__(self) -> int:
        return len(self.point_ids)

    @property
    def nbytes(self) -> int:
        return (
            self.positions.nbytes
            + self.descriptors.nbytes
            + self.normals.nbytes
            + self.min_distances.nbytes
            + self.max_distances.nbytes
            + self.point_ids.nbytes
        )

    @staticmethod
    def empty() -> "MapPointSoA":
        return MapPointSoA(
            positions=np.empty((0, 3)),
            descriptors=np.zeros((0, 4), dtype=np.uint64),
            normals=np.empty((0, 3)),
            min_distances=np.empty(0),
            max_distances=np.empty(0),
            point_ids=np.empty(0, dtype=np.int64),
        )


def decompose_map_points(points: Sequence[MapPoint],
                         out: MapPointSoA | None = None) -> MapPointSoA:
    """Flatten map points into parallel arrays, preserving input order.

    When ``out`` is given its arrays are filled in place (they must be at
    least as long as ``points``) and views of length n are returned.
    """
    n = len(points)
    if out is None:
        out = MapPointSoA(
            positions=np.empty((n, 3)),
            descriptors=np.empty((n, 4), dtype=np.uint64),
            normals=np.empty((n, 3)),
            min_distances=np.empty(n),
            max_distances=np.empty(n),
            point_ids=np.empty(n, dtype=np.int64),
        )
    for i, p in enumerate(points):
        out.positions[i] = p.position
        out.descriptors[i] = p.descriptor
        out.normals[i] = p.normal
        out.min_distances[i] = p.min_distance
        out.max_distances[i] = p.max_distance
        out.point_ids[i] = p.point_id
    return MapPointSoA(
        positions=out.positions[:n],
        descriptors=out.descriptors[:n],
        normals=out.normals[:n],
        min_distances=out.min_distances[:n],
        max_distances=out.max_distances[:n],
        point_ids=out.point_ids[:n],
    )


class WorldMap:
    """Minimal global map: keyframes plus map points with observation links.

    Mutated only by the tracking thread (single-writer rule).
    """

    def __init__(self) -> None:
        self.points: dict[int, MapPoint] = {}
        self.keyframes: dict[int, KeyFrame] = {}
        self._next_point_id = 0
        self._next_kf_id = 0

    def new_point_id(self) -> int:
        pid = self._next_point_id
        self._next_point_id += 1
        return pid

    def new_keyframe_id(self) -> int:
        kid = self._next_kf_id
        self._next_kf_id += 1
        return kid

    def add_point(self, point: MapPoint) -> None:
        self.points[point.point_id] = point

    def add_keyframe(self, kf: KeyFrame) -> None:
        self.keyframes[kf.kf_id] = kf
        for slot, pid in enumerate(kf.point_ids):
            if pid != NO_POINT:
                self.points[int(pid)].observations.add((kf.kf_id, slot))

    def points_by_ids(self, ids: Iterable[int]) -> list[MapPoint]:
        return [self.points[int(i)] for i in ids]
