import numpy as np

from trackfront.descriptors import random_descriptors
from trackfront.mapping import (FrameGrid, KeyFrame, MapPoint, MapPointSoA,
                                WorldMap, decompose_map_points, FeatureSet,
                                NO_POINT)


def random_points(rng, n):
    pts = []
    for i in range(n):
        normal = rng.normal(0, 1, 3)
        normal /= np.linalg.norm(normal)
        mind = rng.uniform(0.1, 1.0)
        pts.append(MapPoint(
            point_id=int(rng.integers(0, 10**6)),
            position=rng.normal(0, 5, 3),
            descriptor=random_descriptors(rng, 1)[0],
            normal=normal,
            min_distance=mind,
            max_distance=mind * rng.uniform(1.0, 8.0),
        ))
    return pts


class TestDecompose:
    def test_empty(self):
        soa = decompose_map_points([])
        assert len(soa) == 0
        for arr in (soa.positions, soa.descriptors, soa.normals,
                    soa.min_distances, soa.max_distances, soa.point_ids):
            assert len(arr) == 0

    def test_singleton(self, rng):
        (p,) = random_points(rng, 1)
        soa = decompose_map_points([p])
        assert len(soa) == 1
        np.testing.assert_array_equal(soa.positions[0], p.position)
        np.testing.assert_array_equal(soa.descriptors[0], p.descriptor)
        assert soa.point_ids[0] == p.point_id

    def test_round_trip_1000(self, rng):
        pts = random_points(rng, 1000)
        soa = decompose_map_points(pts)
        assert len(soa) == 1000
        for i in (0, 1, 99, 500, 999):
            p = pts[i]
            np.testing.assert_array_equal(soa.positions[i], p.position)
            np.testing.assert_array_equal(soa.descriptors[i], p.descriptor)
            np.testing.assert_array_equal(soa.normals[i], p.normal)
            assert soa.min_distances[i] == p.min_distance
            assert soa.max_distances[i] == p.max_distance
            assert soa.point_ids[i] == p.point_id

    def test_bijection_no_collision_no_omission(self, rng):
        pts = random_points(rng, 300)
        for i, p in enumerate(pts):
            p.point_id = 1000 + i  # force unique ids
        soa = decompose_map_points(pts)
        assert sorted(soa.point_ids.tolist()) == sorted(p.point_id for p in pts)
        assert len(set(soa.point_ids.tolist())) == len(pts)

    def test_preallocated_output(self, rng):
        pts = random_points(rng, 10)
        out = MapPointSoA(
            positions=np.empty((64, 3)), descriptors=np.empty((64, 4), np.uint64),
            normals=np.empty((64, 3)), min_distances=np.empty(64),
            max_distances=np.empty(64), point_ids=np.empty(64, np.int64))
        soa = decompose_map_points(pts, out=out)
        assert len(soa) == 10
        assert soa.positions.base is out.positions or soa.positions.base is out.positions.base


class TestFrameGrid:
    def test_every_index_exactly_once(self, rng):
        n = 500
        u = rng.uniform(0, 752, n)
        v = rng.uniform(0, 480, n)
        grid = FrameGrid(u, v, 752, 480, cell_px=48)
        seen = []
        for cy in range(grid.ny):
            for cx in range(grid.nx):
                seen.extend(grid.cell_indices(cx, cy).tolist())
        assert sorted(seen) == list(range(n))

    def test_cell_membership(self, rng):
        u = np.array([10.0, 100.0, 700.0])
        v = np.array([10.0, 400.0, 470.0])
        grid = FrameGrid(u, v, 752, 480, cell_px=48)
        assert 0 in grid.cell_indices(0, 0).tolist()
        assert 1 in grid.cell_indices(int(100 // 48), int(400 // 48)).tolist()


class TestWorldMap:
    def test_keyframe_observations_bidirectional(self, rng):
        world = WorldMap()
        pts = random_points(rng, 5)
        for i, p in enumerate(pts):
            p.point_id = i
            world.add_point(p)
        slots = np.array([0, NO_POINT, 2, 3, NO_POINT, 4], dtype=np.int64)
        feats = FeatureSet(
            u=np.arange(6, dtype=float), v=np.arange(6, dtype=float),
            octave=np.zeros(6, np.int32), angle=np.zeros(6),
            response=np.zeros(6, np.float32),
            descriptors=random_descriptors(rng, 6))
        kf = KeyFrame(kf_id=0, frame_id=0, timestamp=0.0, pose=None,
                      left=feats, depth=np.ones(6), point_ids=slots)
        world.add_keyframe(kf)
        for slot, pid in enumerate(slots):
            if pid != NO_POINT:
                assert (0, slot) in world.points[int(pid)].observations
        np.testing.assert_array_equal(kf.observed_point_ids(), [0, 2, 3, 4])
