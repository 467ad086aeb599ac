import json
import math

import numpy as np
import pytest

from objrf.geometry import (
    CameraIntrinsics,
    ObjectBox,
    ObjectRay,
    Pose,
    Ray,
    box_json_dumps,
    box_json_loads,
    intersect_unit_cube,
    object_ray,
    object_rays,
    pixel_ray,
    pixel_rays,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_to_matrix,
    rigid_transform_box,
    rigid_transform_ray,
)


def random_pose(rng) -> Pose:
    axis = rng.normal(size=3)
    angle = rng.uniform(0, 2 * math.pi)
    return Pose(quat_from_axis_angle(axis, angle), rng.normal(scale=2.0, size=3))


def random_box(rng) -> ObjectBox:
    return ObjectBox(random_pose(rng), rng.uniform(0.5, 4.0, size=3))


class TestCamera:
    def test_principal_point_is_on_axis(self):
        cam = CameraIntrinsics(100, 100, 50, 50, 100, 100)
        ray = pixel_ray(cam, (50.0, 50.0))
        np.testing.assert_allclose(ray.direction, [0, 0, 1], atol=1e-15)
        np.testing.assert_array_equal(ray.origin, [0, 0, 0])

    def test_45_degree_pixel(self):
        cam = CameraIntrinsics(100, 100, 50, 50, 200, 100)
        ray = pixel_ray(cam, (150.0, 50.0))
        np.testing.assert_allclose(ray.direction, [math.sqrt(0.5), 0, math.sqrt(0.5)], atol=1e-12)

    def test_directions_unit_norm(self):
        cam = CameraIntrinsics(80, 120, 30, 40, 64, 96)
        rng = np.random.default_rng(0)
        us = np.stack([rng.uniform(0, 64, 200), rng.uniform(0, 96, 200)], axis=1)
        dirs = pixel_rays(cam, us)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)

    def test_invalid_intrinsics(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0, 1, 0, 0, 10, 10)
        with pytest.raises(ValueError):
            CameraIntrinsics(1, 1, 20, 0, 10, 10)


class TestNocsMapping:
    def test_center_to_origin(self):
        rng = np.random.default_rng(1)
        box = random_box(rng)
        np.testing.assert_allclose(box.to_nocs(box.pose.translation), [0, 0, 0], atol=1e-12)

    def test_identity_pose_corner(self):
        box = ObjectBox(Pose.identity(), np.array([2.0, 2.0, 2.0]))
        np.testing.assert_allclose(box.to_nocs([1.0, 1.0, 1.0]), [0.5, 0.5, 0.5], atol=1e-15)

    def test_corners_map_to_unit_cube_corners(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            box = random_box(rng)
            mapped = box.to_nocs(box.corners())
            assert np.allclose(np.abs(mapped), 0.5, atol=1e-9)

    def test_round_trip_bijection(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            box = random_box(rng)
            pts = rng.normal(scale=3.0, size=(100, 3))
            back = box.from_nocs(box.to_nocs(pts))
            assert np.max(np.abs(back - pts)) < 1e-10

    def test_zero_extent_rejected(self):
        with pytest.raises(ValueError):
            ObjectBox(Pose.identity(), np.array([1.0, 0.0, 1.0]))


class TestUnitCubeIntersection:
    def test_axis_aligned_hit(self):
        w = intersect_unit_cube([0, 0, -2.0], [0, 0, 1.0])
        assert w == pytest.approx((1.5, 2.5))

    def test_parallel_miss(self):
        assert intersect_unit_cube([0, 2.0, 0], [0, 0, 1.0]) is None

    def test_origin_inside_clamps_entry(self):
        w = intersect_unit_cube([0, 0, 0], [0, 0, 1.0])
        assert w == pytest.approx((0.0, 0.5))

    def test_behind_camera_misses(self):
        assert intersect_unit_cube([0, 0, 2.0], [0, 0, 1.0]) is None

    def test_against_dense_sampling_oracle(self):
        # oracle: march t over [0, 4] with 2e4 steps; inside-cube flags give
        # hit/miss and the first/last inside points bracket the window
        rng = np.random.default_rng(42)
        n = 10_000
        origins = rng.uniform(-2.0, 2.0, size=(n, 3))
        dirs = rng.normal(size=(n, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        ts = np.linspace(0.0, 4.0, 20_001)
        step = ts[1] - ts[0]
        mismatches = 0
        max_endpoint_err = 0.0
        for i in range(n):
            w = intersect_unit_cube(origins[i], dirs[i])
            pts = origins[i][None, :] + ts[:, None] * dirs[i][None, :]
            inside = np.all(np.abs(pts) <= 0.5, axis=1)
            if not inside.any():
                if w is not None and (w[1] - w[0]) > 2 * step:
                    mismatches += 1
                continue
            if w is None:
                first = ts[np.argmax(inside)]
                last = ts[len(inside) - 1 - np.argmax(inside[::-1])]
                if last - first > 2 * step:
                    mismatches += 1
                continue
            first = ts[np.argmax(inside)]
            last = ts[len(inside) - 1 - np.argmax(inside[::-1])]
            max_endpoint_err = max(
                max_endpoint_err, abs(first - w[0]), abs(last - w[1])
            )
        assert mismatches == 0
        assert max_endpoint_err < 2e-4 + step


class TestObjectRay:
    def test_isotropic_box_keeps_direction(self):
        rng = np.random.default_rng(4)
        pose = random_pose(rng)
        box = ObjectBox(pose, np.array([2.0, 2.0, 2.0]))
        d = np.array([0.3, -0.5, 0.81])
        d /= np.linalg.norm(d)
        oray = object_ray(box, Ray(np.array([0.0, 0, 0]), d))
        expected = pose.matrix.T @ d
        np.testing.assert_allclose(oray.ray.direction, expected, atol=1e-12)
        assert oray.speed == pytest.approx(0.5)

    def test_anisotropic_renormalization(self):
        box = ObjectBox(Pose.identity(), np.array([1.0, 1.0, 4.0]))
        oray = object_ray(box, Ray(np.array([0.0, 0, -8.0]), np.array([0.0, 0, 1.0])))
        np.testing.assert_allclose(oray.ray.direction, [0, 0, 1.0], atol=1e-15)
        assert oray.speed == pytest.approx(0.25)

    def test_degenerate_direction_raises(self):
        box = ObjectBox(Pose.identity(), np.array([1.0, 1.0, 1.0]))
        with pytest.raises(ValueError):
            object_ray(box, Ray(np.zeros(3), np.zeros(3)))

    def test_points_on_original_ray_oracle(self):
        # forward-map sampling oracle: mapping window samples back through
        # the inverse must land on the original camera-space ray
        rng = np.random.default_rng(5)
        checked = 0
        for _ in range(1000):
            box = random_box(rng)
            origin = box.pose.translation + rng.normal(scale=4.0, size=3)
            to_center = box.pose.translation - origin
            d = to_center + rng.normal(scale=0.5, size=3)
            d /= np.linalg.norm(d)
            ray = Ray(origin, d)
            oray = object_ray(box, ray)
            if oray.window is None:
                continue
            checked += 1
            for t in np.linspace(oray.window[0], oray.window[1], 5):
                p_cam = box.from_nocs(oray.at(t))
                v = p_cam - ray.origin
                t_cam = float(v @ ray.direction)
                np.testing.assert_allclose(p_cam, ray.at(t_cam), atol=1e-9)
                assert t_cam == pytest.approx(t / oray.speed, abs=1e-9)
        assert checked > 300

    def test_window_endpoints_on_cube_boundary(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            box = random_box(rng)
            origin = box.pose.translation + rng.normal(scale=5.0, size=3) * 2
            d = box.pose.translation - origin + rng.normal(scale=0.3, size=3)
            d /= np.linalg.norm(d)
            oray = object_ray(box, Ray(origin, d))
            if oray.window is None or oray.window[0] == 0.0:
                continue
            for t in oray.window:
                p = oray.at(t)
                assert np.max(np.abs(p)) == pytest.approx(0.5, abs=1e-9)


class TestRigidInvariance:
    def test_object_ray_invariant_under_joint_transform(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            box = random_box(rng)
            origin = box.pose.translation + rng.normal(scale=4.0, size=3)
            d = box.pose.translation - origin + rng.normal(scale=0.4, size=3)
            d /= np.linalg.norm(d)
            ray = Ray(origin, d)
            q = random_pose(rng)
            oray_a = object_ray(box, ray)
            oray_b = object_ray(rigid_transform_box(q, box), rigid_transform_ray(q, ray))
            np.testing.assert_allclose(oray_a.ray.origin, oray_b.ray.origin, atol=1e-9)
            np.testing.assert_allclose(oray_a.ray.direction, oray_b.ray.direction, atol=1e-9)
            assert (oray_a.window is None) == (oray_b.window is None)
            if oray_a.window:
                np.testing.assert_allclose(oray_a.window, oray_b.window, atol=1e-9)


class TestJsonSchema:
    def test_box_round_trip(self):
        rng = np.random.default_rng(8)
        box = random_box(rng)
        parsed = box_json_loads(box_json_dumps(box))
        np.testing.assert_allclose(parsed.pose.rotation, box.pose.rotation, atol=1e-15)
        np.testing.assert_allclose(parsed.pose.translation, box.pose.translation, atol=1e-15)
        np.testing.assert_allclose(parsed.size, box.size, atol=1e-15)

    def test_schema_keys(self):
        box = ObjectBox(Pose.identity(), np.array([1.0, 2.0, 3.0]))
        d = json.loads(box_json_dumps(box))
        assert set(d) == {"rotation", "translation", "size"}
        assert d["rotation"] == [1.0, 0.0, 0.0, 0.0]

    def test_quat_matrix_round_trip(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            q = quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 2 * math.pi))
            q2 = quat_from_matrix(quat_to_matrix(q))
            assert min(np.abs(q2 - q).max(), np.abs(q2 + q).max()) < 1e-12
