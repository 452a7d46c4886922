import numpy as np
import pytest

from trackfront.cameras import (FisheyeCamera, InvalidDisparityError,
                                PinholeCamera, stereo_depth_from_disparity)
from trackfront.geometry import Pose, so3_exp


def make_fisheye(**kw):
    defaults = dict(fx=190.0, fy=190.0, cx=256.0, cy=256.0,
                    k1=0.003, k2=-0.002, k3=0.001, k4=-0.0005,
                    width=512, height=512)
    defaults.update(kw)
    return FisheyeCamera(**defaults)


class TestPinhole:
    def test_canonical_camera(self):
        cam = PinholeCamera(1.0, 1.0, 0.0, 0.0, 1.0, 10, 10)
        # principal point must be inside the image for this tiny camera
        assert cam.project(np.array([0.0, 0.0, 1.0])) == (0.0, 0.0)

    def test_optical_axis_hits_principal_point(self, cam):
        for z in (0.5, 1.0, 7.3):
            u, v = cam.project(np.array([0.0, 0.0, z]))
            assert (u, v) == (cam.cx, cam.cy)

    def test_behind_camera_invisible(self, cam):
        assert cam.project(np.array([0.0, 0.0, -1.0])) is None
        assert cam.project(np.array([0.1, 0.1, 0.0])) is None

    def test_out_of_bounds_invisible(self, cam):
        assert cam.project(np.array([10.0, 0.0, 1.0])) is None

    def test_formula_oracle(self, cam, rng):
        # scalar-formula oracle: u = fx x / z + cx, v = fy y / z + cy
        for _ in range(1000):
            p = rng.normal(0, 1.0, 3)
            p[2] = rng.uniform(0.2, 10.0)
            res = cam.project(p)
            u_o = cam.fx * p[0] / p[2] + cam.cx
            v_o = cam.fy * p[1] / p[2] + cam.cy
            inside = 0 <= u_o < cam.width and 0 <= v_o < cam.height
            if res is None:
                assert not inside
            else:
                assert abs(res[0] - u_o) < 1e-9 and abs(res[1] - v_o) < 1e-9

    def test_project_many_matches_scalar(self, cam, rng):
        pts = rng.normal(0, 2.0, (500, 3))
        pts[:, 2] = rng.uniform(-1.0, 8.0, 500)
        uv, vis = cam.project_many(pts)
        for i in range(500):
            res = cam.project(pts[i])
            assert vis[i] == (res is not None)
            if res is not None:
                np.testing.assert_allclose(uv[i], res, atol=1e-12)

    def test_back_project_round_trip(self, cam, rng):
        for _ in range(200):
            p = np.array([rng.normal(0, 1), rng.normal(0, 1), rng.uniform(0.2, 9)])
            res = cam.project(p)
            if res is None:
                continue
            rec = cam.back_project(*res, p[2])
            assert np.linalg.norm(rec - p) / np.linalg.norm(p) < 1e-6


class TestFisheye:
    def test_optical_axis_exact(self):
        cam = make_fisheye()
        assert cam.project(np.array([0.0, 0.0, 2.0])) == (cam.cx, cam.cy)
        uv, vis = cam.project_many(np.array([[0.0, 0.0, 2.0]]))
        assert vis[0] and tuple(uv[0]) == (cam.cx, cam.cy)

    def test_zero_coefficients_reduce_to_equidistant(self, rng):
        cam = make_fisheye(k1=0.0, k2=0.0, k3=0.0, k4=0.0)
        for _ in range(200):
            p = rng.normal(0, 1, 3)
            p[2] = rng.uniform(0.3, 5.0)
            res = cam.project(p)
            r = np.hypot(p[0], p[1])
            if r < 1e-12:
                continue
            theta = np.arctan2(r, p[2])
            u_o = cam.fx * theta * p[0] / r + cam.cx
            v_o = cam.fy * theta * p[1] / r + cam.cy
            if res is not None:
                assert abs(res[0] - u_o) < 1e-9 and abs(res[1] - v_o) < 1e-9

    def test_polynomial_oracle(self, rng):
        cam = make_fisheye()
        for _ in range(1000):
            p = rng.normal(0, 1, 3)
            p[2] = rng.uniform(0.1, 6.0)
            r = np.hypot(p[0], p[1])
            if r < 1e-12:
                continue
            th = np.arctan2(r, p[2])
            d = th + cam.k1 * th**3 + cam.k2 * th**5 + cam.k3 * th**7 + cam.k4 * th**9
            u_o = cam.fx * d * p[0] / r + cam.cx
            v_o = cam.fy * d * p[1] / r + cam.cy
            res = cam.project(p)
            inside = 0 <= u_o < cam.width and 0 <= v_o < cam.height
            if res is None:
                assert not inside
            else:
                assert abs(res[0] - u_o) < 1e-9 and abs(res[1] - v_o) < 1e-9

    def test_unproject_round_trip(self, rng):
        cam = make_fisheye()
        for _ in range(300):
            p = rng.normal(0, 1, 3)
            p[2] = rng.uniform(0.3, 5.0)
            res = cam.project(p)
            if res is None:
                continue
            ray = cam.unproject(*res)
            cos = ray @ p / np.linalg.norm(p)
            assert cos > 1 - 1e-9

    def test_right_extrinsic_stored(self):
        ext = Pose(so3_exp([0.0, 0.02, 0.0]), [-0.1, 0.0, 0.0])
        cam = make_fisheye(right_extrinsic=ext)
        np.testing.assert_allclose(cam.right_extrinsic.translation, [-0.1, 0, 0])


class TestStereoDepth:
    def test_arithmetic_identity(self, cam):
        c = PinholeCamera(1, 1, 0, 0, 50.0, 10, 10)
        assert stereo_depth_from_disparity(c, 10.0) == 5.0

    def test_unit_depth(self):
        c = PinholeCamera(1, 1, 0, 0, 50.0, 10, 10)
        assert stereo_depth_from_disparity(c, 50.0) == 1.0

    def test_zero_disparity_raises(self, cam):
        with pytest.raises(InvalidDisparityError):
            stereo_depth_from_disparity(cam, 0.0)
        with pytest.raises(InvalidDisparityError):
            stereo_depth_from_disparity(cam, -1.0)
