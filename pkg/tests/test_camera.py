import numpy as np
import pytest

from quadland.camera import (
    BehindCameraError,
    CameraError,
    CameraRig,
    Intrinsics,
    back_project,
    back_project_many,
    camera_axes,
    intrinsics_from_fov,
    project,
    project_many,
)


def unit_focal() -> Intrinsics:
    return Intrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=4, height=4)


def d455_like() -> Intrinsics:
    return intrinsics_from_fov((87.0, 58.0), (1280, 720))


class TestProject:
    def test_optical_axis_hits_principal_point(self):
        K = d455_like()
        u, v, s, inside = project(np.array([0.0, 0.0, 2.0]), K)
        assert (u, v, s) == (K.cx, K.cy, 2.0)
        assert inside

    def test_unit_focal(self):
        u, v, s, _ = project(np.array([1.0, 1.0, 1.0]), unit_focal())
        assert (u, v, s) == (1.0, 1.0, 1.0)

    def test_behind_camera_raises(self):
        with pytest.raises(BehindCameraError):
            project(np.array([0.0, 0.0, -1.0]), d455_like())

    def test_round_trip_random(self):
        K = d455_like()
        rng = np.random.default_rng(0)
        for _ in range(1000):
            u = rng.uniform(0, K.width)
            v = rng.uniform(0, K.height)
            s = rng.uniform(0.1, 5.0)
            p = back_project(u, v, s, K)
            u2, v2, s2, _ = project(p, K)
            assert abs(u - u2) < 1e-9 and abs(v - v2) < 1e-9 and abs(s - s2) < 1e-9

    def test_vectorized_matches_scalar(self):
        K = d455_like()
        rng = np.random.default_rng(1)
        pts = np.column_stack(
            [rng.uniform(-1, 1, 20), rng.uniform(-1, 1, 20), rng.uniform(0.5, 4, 20)]
        )
        uvs, inside = project_many(pts, K)
        for i, p in enumerate(pts):
            u, v, s, ins = project(p, K)
            assert np.allclose(uvs[i], [u, v, s])
            assert inside[i] == ins


class TestBackProject:
    def test_principal_point(self):
        K = d455_like()
        assert np.allclose(back_project(K.cx, K.cy, 3.0, K), [0, 0, 3])

    def test_unit_focal(self):
        assert np.allclose(back_project(2.0, 0.0, 1.0, unit_focal()), [2, 0, 1])

    def test_invalid_depth(self):
        with pytest.raises(CameraError):
            back_project(10.0, 10.0, 0.0, d455_like())

    def test_vectorized_round_trip(self):
        K = d455_like()
        rng = np.random.default_rng(2)
        uvs = np.column_stack(
            [rng.uniform(0, K.width, 50), rng.uniform(0, K.height, 50), rng.uniform(0.2, 4, 50)]
        )
        pts = back_project_many(uvs, K)
        uvs2, _ = project_many(pts, K)
        assert np.max(np.abs(uvs - uvs2)) < 1e-9


class TestIntrinsicsFromFov:
    def test_90_degree_square(self):
        K = intrinsics_from_fov((90.0, 90.0), (800, 800))
        assert abs(K.fx - 400.0) < 1e-9
        assert abs(K.fy - 400.0) < 1e-9

    def test_87_degree_value(self):
        K = intrinsics_from_fov((87.0, 58.0), (1280, 720))
        assert abs(K.fx - 640.0 / np.tan(np.radians(43.5))) < 1e-9
        assert abs(K.fy - 360.0 / np.tan(np.radians(29.0))) < 1e-9

    def test_symmetric_fov_centers_principal_point(self):
        K = intrinsics_from_fov((60.0, 40.0), (1000, 500))
        assert K.cx == 500.0 and K.cy == 250.0

    def test_half_fov_ray_lands_on_border(self):
        K = intrinsics_from_fov((87.0, 58.0), (1280, 720))
        ray = np.array([np.tan(np.radians(43.5)), 0.0, 1.0])
        u, _, _, _ = project(ray, K)
        assert abs(u - K.width) < 0.5

    def test_rejects_invalid_fov(self):
        with pytest.raises(CameraError):
            intrinsics_from_fov((185.0, 58.0), (1280, 720))

    def test_fov_cone_excludes_outside_rays(self):
        K = intrinsics_from_fov((87.0, 58.0), (1280, 720))
        rng = np.random.default_rng(3)
        half_w, half_h = np.radians(43.5), np.radians(29.0)
        for _ in range(500):
            ax = rng.uniform(-np.pi / 2, np.pi / 2)
            ay = rng.uniform(-np.pi / 2, np.pi / 2)
            ray = np.array([np.tan(ax), np.tan(ay), 1.0])
            u, v, _, inside = project(ray, K)
            outside_cone = abs(ax) > half_w or abs(ay) > half_h
            if outside_cone:
                assert not inside


class TestCameraRig:
    def test_axes_orthonormal(self):
        R = camera_axes(20.0)
        assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert abs(np.linalg.det(R) - 1.0) < 1e-12

    def test_no_tilt_looks_forward(self):
        R = camera_axes(0.0)
        # Optical axis (camera z) maps to platform +x.
        assert np.allclose(R @ np.array([0, 0, 1.0]), [1, 0, 0], atol=1e-12)

    def test_tilt_pitches_up(self):
        R = camera_axes(20.0)
        axis = R @ np.array([0, 0, 1.0])
        assert abs(axis[2] - np.sin(np.radians(20.0))) < 1e-12

    def test_platform_camera_round_trip(self):
        rig = CameraRig()
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(10, 3))
        back = rig.to_platform(rig.to_camera(pts))
        assert np.max(np.abs(back - pts)) < 1e-12

    def test_point_ahead_is_visible(self):
        rig = CameraRig()
        cam_pts = rig.to_camera(np.array([[1.5, 0.0, 0.6]]))
        uvs, inside = project_many(cam_pts, rig.intrinsics)
        assert inside[0]
