import math

import numpy as np
import pytest

from gsrecon.errors import DegeneracyError, DomainError, NoIntersectionError, ProjectionError
from gsrecon.geometry import (
    CameraParams,
    LossWeights,
    apply_homography,
    ground_grid,
    homography_from_params,
    intrinsics_from_fov,
    loss_camera,
    loss_heatmap,
    loss_params,
    loss_total,
    loss_world,
    ndc_to_pixel,
    ndc_to_world,
    pixel_to_pitch,
    rotation_from_angles,
    uv_heatmaps,
    world_to_ndc,
    world_to_pixel,
)
from gsrecon.pitch import LENGTH, WIDTH

from conftest import random_params


def _rot_oracle(pan, tilt, roll):
    cp, sp, ct, st, cr, sr = math.cos(pan), math.sin(pan), math.cos(tilt), math.sin(tilt), math.cos(roll), math.sin(roll)
    r_pan = np.array([[cp, sp, 0], [-sp, cp, 0], [0, 0, 1]])
    r_tilt = np.array([[1, 0, 0], [0, ct, st], [0, -st, ct]])
    r_roll = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return r_roll @ r_tilt @ r_pan


class TestIntrinsics:
    def test_square_quarter_turn(self):
        assert np.allclose(intrinsics_from_fov(math.pi / 2, 100, 100), np.eye(3))

    def test_broadcast_fov(self):
        k = intrinsics_from_fov(0.86, 1920, 1080)
        assert k[1, 1] == pytest.approx(1 / math.tan(0.43), abs=1e-15)
        assert k[0, 0] == pytest.approx(k[1, 1] * 1080 / 1920, abs=1e-15)
        assert k[0, 2] == k[1, 2] == 0.0

    @pytest.mark.parametrize("fov", [0.0, -0.1, math.pi, 4.0])
    def test_out_of_range(self, fov):
        with pytest.raises(DomainError):
            intrinsics_from_fov(fov, 1920, 1080)

    def test_camera_rejects_bad_fov(self):
        with pytest.raises(DomainError):
            CameraParams(0, 50, -20, 0, 1, 0, 0.0)


class TestRotation:
    def test_zero_is_identity(self):
        assert np.array_equal(rotation_from_angles(0, 0, 0), np.eye(3))

    def test_orthonormal(self, rng):
        for pan, tilt, roll in rng.uniform(-4, 4, size=(500, 3)):
            r = rotation_from_angles(pan, tilt, roll)
            assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)

    def test_matches_composition(self, rng):
        for pan, tilt, roll in rng.uniform(-4, 4, size=(50, 3)):
            assert np.allclose(rotation_from_angles(pan, tilt, roll), _rot_oracle(pan, tilt, roll), atol=1e-14)

    def test_broadcast_camera_faces_left_half(self, fig_camera):
        r = fig_camera.rotation()
        assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12
        depth = world_to_ndc(fig_camera, np.array([[0.0, 0.0, 0.0], [-48.0, 0.0, 0.0]]))[:, 2]
        assert (depth > 0).all()
        # optical axis meets the ground in the left half
        axis = r.T @ np.array([0.0, 0.0, 1.0])
        s = -fig_camera.z / axis[2]
        assert fig_camera.x + s * axis[0] < 0


class TestNdc:
    def test_identity_camera(self):
        # fov = pi/2 on a square frame gives identity intrinsics
        cam = CameraParams(0, 0, 0, 0, 0, 0, math.pi / 2)
        pts = np.array([[1.0, 2.0, 3.0], [-4.0, 5.0, 6.5]])
        assert np.allclose(world_to_ndc(cam, pts, aspect=1.0), pts, atol=1e-15)

    def test_camera_position_maps_to_origin(self, fig_camera):
        assert np.allclose(world_to_ndc(fig_camera, fig_camera.position), 0.0, atol=1e-12)

    def test_pitch_centre_in_front(self, fig_camera):
        p = world_to_ndc(fig_camera, np.zeros(3))
        assert np.isfinite(p).all() and p[2] > 0

    def test_origin_maps_to_position(self, fig_camera):
        assert np.allclose(ndc_to_world(fig_camera, np.zeros(3)), fig_camera.position, atol=1e-12)

    def test_round_trip_field_points(self, fig_camera, rng):
        pts = np.column_stack([rng.uniform(-52.5, 52.5, 1000), rng.uniform(-34, 34, 1000), rng.uniform(-3, 0, 1000)])
        back = ndc_to_world(fig_camera, world_to_ndc(fig_camera, pts))
        assert np.abs(back - pts).max() < 1e-9

    def test_matches_written_formula(self, fig_camera, rng):
        pts = rng.normal(size=(20, 3)) * 30
        expected = (intrinsics_from_fov(fig_camera.fov, 1920, 1080) @ _rot_oracle(fig_camera.pan, fig_camera.tilt, fig_camera.roll)
                    @ (pts - fig_camera.position).T).T
        assert np.allclose(world_to_ndc(fig_camera, pts), expected, atol=1e-12)


class TestPixels:
    def test_centre(self):
        assert np.allclose(ndc_to_pixel(np.array([0.0, 0.0, 1.0]), 1920, 1080), [960, 540])

    def test_corner(self):
        assert np.allclose(ndc_to_pixel(np.array([1.0, -1.0, 1.0]), 1920, 1080), [1920, 0])

    def test_zero_depth(self):
        with pytest.raises(ProjectionError):
            ndc_to_pixel(np.array([1.0, 1.0, 0.0]))

    def test_pitch_centre_back_projection(self, fig_camera):
        pix = world_to_pixel(fig_camera, np.zeros(3))
        assert np.allclose(pixel_to_pitch(fig_camera, pix), 0.0, atol=1e-6)

    def test_corners_round_trip(self, fig_camera):
        corners = np.array([[sx * LENGTH / 2, sy * WIDTH / 2, 0.0] for sx in (-1, 1) for sy in (-1, 1)])
        for c in corners:
            pix = world_to_pixel(fig_camera, c)
            back = pixel_to_pitch(fig_camera, pix)
            assert np.abs(back - c).max() < 1e-6
            assert back[2] == 0.0
            assert np.abs(world_to_pixel(fig_camera, back) - pix).max() < 1e-6

    def test_sky_pixel(self, fig_camera):
        with pytest.raises(NoIntersectionError):
            pixel_to_pitch(fig_camera, np.array([960.0, -5000.0]))


class TestHomography:
    def test_agrees_with_projection(self, fig_camera, rng):
        pts = np.column_stack([rng.uniform(-52.5, 0, 100), rng.uniform(-34, 34, 100)])
        h = homography_from_params(fig_camera)
        full = world_to_pixel(fig_camera, np.column_stack([pts, np.zeros(100)]))
        assert np.abs(apply_homography(h, pts) - full).max() < 1e-6
        assert h[2, 2] == pytest.approx(1.0)

    def test_invertible(self, fig_camera):
        assert np.isfinite(np.linalg.cond(homography_from_params(fig_camera)))

    def test_camera_on_ground(self):
        with pytest.raises(DegeneracyError):
            homography_from_params(CameraParams(0, 50, 0, 0, 1.2, 0, 0.8))


def _world_oracle(pred, gt, pts):
    total = 0.0
    for p in pts:
        ndc = world_to_ndc(gt, p)
        back = ndc_to_world(pred, ndc)
        total += math.sqrt(sum((back[i] - p[i]) ** 2 for i in range(3)))
    return total


def _camera_oracle(pred, gt, pts):
    total = 0.0
    for p in pts:
        a, b = world_to_ndc(pred, p), world_to_ndc(gt, p)
        total += math.sqrt(sum((a[i] - b[i]) ** 2 for i in range(3)))
    return total


class TestLosses:
    def test_zero_at_truth(self, fig_camera):
        assert loss_world(fig_camera, fig_camera) == 0.0
        assert loss_camera(fig_camera, fig_camera) == 0.0
        assert loss_params(fig_camera, fig_camera) == 0.0
        uv = uv_heatmaps(fig_camera, 64, 36)
        assert loss_heatmap(uv, uv) == 0.0
        assert loss_total(fig_camera, fig_camera, uv_pair=(uv, uv)) == 0.0

    def test_world_translation(self):
        gt = CameraParams(0, 0, 0, 0, 0, 0, math.pi / 2)
        pred = CameraParams(1, 0, 0, 0, 0, 0, math.pi / 2)
        pts = np.random.default_rng(0).normal(size=(17, 3))
        assert loss_world(pred, gt, pts, aspect=1.0) == pytest.approx(17.0, abs=1e-12)

    def test_world_and_camera_oracle(self, fig_camera):
        pred = CameraParams(**{**fig_camera.__dict__, "pan": fig_camera.pan + 0.05})
        grid = ground_grid(36)
        assert len(grid) == 36 * 36
        assert loss_world(pred, fig_camera, grid) == pytest.approx(_world_oracle(pred, fig_camera, grid), rel=1e-12)
        assert loss_camera(pred, fig_camera, grid) == pytest.approx(_camera_oracle(pred, fig_camera, grid), rel=1e-12)
        assert loss_world(pred, fig_camera) > 0

    def test_camera_loss_is_resolution_free(self, fig_camera):
        pred = CameraParams(**{**fig_camera.__dict__, "tilt": fig_camera.tilt + 0.02})
        a = loss_camera(pred, fig_camera, aspect=1920 / 1080)
        b = loss_camera(pred, fig_camera, aspect=3840 / 2160)
        assert a == b

    def test_params(self, fig_camera):
        pred = CameraParams(**{**fig_camera.__dict__, "pan": fig_camera.pan + 0.1})
        assert loss_params(pred, fig_camera) == pytest.approx(0.1, abs=1e-15)
        shifted = CameraParams.from_array(fig_camera.as_array() + 1.0)
        assert loss_params(shifted, fig_camera) == pytest.approx(7.0, abs=1e-12)

    def test_heatmap(self, rng):
        a = rng.normal(size=(2, 5, 7))
        b = a.copy()
        b[0] += 1.0
        assert loss_heatmap(a, b) == pytest.approx(35.0)
        c = rng.normal(size=(2, 5, 7))
        oracle = sum(math.hypot(a[0, i, j] - c[0, i, j], a[1, i, j] - c[1, i, j]) for i in range(5) for j in range(7))
        assert loss_heatmap(a, c) == pytest.approx(oracle, rel=1e-12)
        with pytest.raises(DomainError):
            loss_heatmap(a, rng.normal(size=(2, 5, 6)))

    def test_total_weighted_sum(self, fig_camera, rng):
        pred = CameraParams(**{**fig_camera.__dict__, "x": fig_camera.x + 0.7, "roll": 0.01})
        uv_a, uv_b = rng.normal(size=(2, 2, 4, 4))
        w = LossWeights(0.048, 2.49, 1.0, 10.0)
        terms = [loss_world(pred, fig_camera), loss_camera(pred, fig_camera), loss_params(pred, fig_camera), loss_heatmap(uv_a, uv_b)]
        expected = w.w1 * terms[0] + w.w2 * terms[1] + w.w3 * terms[2] + w.w4 * terms[3]
        assert loss_total(pred, fig_camera, uv_pair=(uv_a, uv_b), weights=w) == pytest.approx(expected, abs=1e-12)
        assert loss_total(pred, fig_camera, uv_pair=(uv_a, uv_b), weights=LossWeights(0, 0, 0, 0)) == 0.0

    def test_empty_points(self, fig_camera):
        with pytest.raises(DomainError):
            loss_world(fig_camera, fig_camera, np.zeros((0, 3)))

    def test_negative_weight(self):
        with pytest.raises(DomainError):
            LossWeights(w1=-1.0)


class TestHeatmaps:
    def test_known_point(self, fig_camera):
        w, h = 192, 108
        target = np.array([-10.0, 5.0, 0.0])
        pix = world_to_pixel(fig_camera, target, w, h)
        # shift the camera so the target sits exactly at a pixel centre
        uv = uv_heatmaps(fig_camera, w, h)
        j, i = int(pix[0]), int(pix[1])
        centre = pixel_to_pitch(fig_camera, np.array([j + 0.5, i + 0.5]), w, h)
        assert np.allclose(uv[:, i, j], centre[:2], atol=1e-6)

    def test_sky_marked_invalid(self):
        cam = CameraParams(0, 60, -15, 0, 1.45, 0, 1.0)  # horizon inside the frame
        uv = uv_heatmaps(cam, 64, 36)
        assert np.isnan(uv[:, 0, :]).all()
        assert np.isfinite(uv[:, -1, :]).all()

    def test_agrees_with_back_projection(self, fig_camera, rng):
        w, h = 320, 180
        uv = uv_heatmaps(fig_camera, w, h)
        ii, jj = rng.integers(0, h, 1000), rng.integers(0, w, 1000)
        for i, j in zip(ii, jj):
            if np.isnan(uv[0, i, j]):
                continue
            p = pixel_to_pitch(fig_camera, np.array([j + 0.5, i + 0.5]), w, h)
            assert np.allclose(uv[:, i, j], p[:2], atol=1e-6)


def test_round_trip_random_cameras(rng):
    for cam in random_params(rng, 200):
        pts = rng.normal(size=(50, 3)) * 40
        assert np.abs(ndc_to_world(cam, world_to_ndc(cam, pts)) - pts).max() < 1e-9
