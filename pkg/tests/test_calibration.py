import math
import warnings

import numpy as np
import pytest
from scipy.signal import savgol_coeffs

from gsrecon.calibration import (
    CalibrationWarning,
    DetectedKeypoint,
    RefinementConfig,
    SmootherConfig,
    fit_line_tls,
    inlier_keypoints,
    keypoints_to_lines,
    refine_params,
    refine_sequence,
    refinement_objective,
    smooth_sequence,
)
from gsrecon.errors import ConfigError
from gsrecon.geometry import CameraParams, pixel_to_pitch, world_to_pixel
from gsrecon.pitch import distance_to_model, standard_pitch

from conftest import FIG_CAMERA, render_keypoints

MODEL = standard_pitch()


def _replace(cam, **kw):
    return CameraParams(**{**cam.__dict__, **kw})


def _touchline_kps(cam, idx, shift=None):
    out = []
    for k in idx:
        p = MODEL.keypoints[k].copy()
        if shift is not None and k in shift:
            p[1] += shift[k]
        u, v = world_to_pixel(cam, p)
        out.append(DetectedKeypoint(int(k), float(u), float(v)))
    return out


def _near_touchline_members():
    return list(MODEL.line("touchline_near").members)


class TestKeypointRecord:
    def test_ranges(self):
        with pytest.raises(ValueError):
            DetectedKeypoint(74, 0, 0)
        with pytest.raises(ValueError):
            DetectedKeypoint(0, 0, 0, 1.5)


class TestLines:
    def test_tls_fit(self):
        c, d = fit_line_tls(np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 3.0]]))
        assert np.allclose(c, [1.0, 2.0])
        assert abs(abs(d @ np.array([1.0, 1.0]) / math.sqrt(2)) - 1) < 1e-12

    def test_three_collinear(self):
        # keypoints in view on the near touchline
        members = [k for k in _near_touchline_members() if MODEL.keypoints[k, 0] < -5][:3]
        obs = keypoints_to_lines(_touchline_kps(FIG_CAMERA, members), FIG_CAMERA, MODEL)
        assert len(obs) == 1
        assert obs[0].line_id == "touchline_near"
        assert sorted(obs[0].inliers) == sorted(members)
        assert obs[0].outliers == ()
        assert abs(obs[0].point[1] - 34.0) < 1e-6
        assert abs(obs[0].direction[1]) < 1e-6

    def test_outlier_dropped(self):
        members = [k for k in _near_touchline_members() if MODEL.keypoints[k, 0] < -5][:3]
        kps = _touchline_kps(FIG_CAMERA, members, shift={members[1]: 5 * 0.5})
        obs = keypoints_to_lines(kps, FIG_CAMERA, MODEL, threshold=0.5)
        assert len(obs) == 1
        assert obs[0].outliers == (members[1],)
        assert sorted(obs[0].inliers) == sorted([members[0], members[2]])
        assert abs(obs[0].point[1] - 34.0) < 1e-6

    def test_no_lines(self):
        members = _near_touchline_members()[:1]
        assert keypoints_to_lines(_touchline_kps(FIG_CAMERA, members), FIG_CAMERA, MODEL) == []
        assert keypoints_to_lines([], FIG_CAMERA, MODEL) == []

    def test_order_invariant(self, rng):
        kps = render_keypoints(FIG_CAMERA, 3.0, rng)
        a = {k.index for k in inlier_keypoints(kps, FIG_CAMERA, MODEL)}
        for _ in range(5):
            perm = [kps[i] for i in rng.permutation(len(kps))]
            assert {k.index for k in inlier_keypoints(perm, FIG_CAMERA, MODEL)} == a


class TestObjective:
    def test_zero_at_truth(self, rng):
        from gsrecon.synthetic import sample_camera

        used = 0
        for _ in range(50):
            cam = sample_camera(rng)
            kps = render_keypoints(cam)
            if len(kps) < 4:
                continue
            used += 1
            assert refinement_objective(cam, kps, MODEL) < 1e-6
        assert used >= 10

    def test_positive_when_perturbed(self):
        kps = render_keypoints(FIG_CAMERA)
        assert refinement_objective(_replace(FIG_CAMERA, pan=FIG_CAMERA.pan + 0.05), kps, MODEL) > 0

    def test_empty_warns(self):
        with pytest.warns(CalibrationWarning):
            assert refinement_objective(FIG_CAMERA, [], MODEL) == 0.0

    def test_matches_point_distances(self, rng):
        # keypoints on one line only: objective equals summed distance to their lines
        cam = _replace(FIG_CAMERA, tilt=FIG_CAMERA.tilt + 0.01)
        kps = render_keypoints(FIG_CAMERA)
        inl = inlier_keypoints(kps, cam, MODEL)
        total = 0.0
        memberships = MODEL.keypoint_lines()
        for k in inl:
            g = pixel_to_pitch(cam, np.array([k.x, k.y]))
            total += sum(distance_to_model(g, MODEL, [li]) for li in memberships[k.index] if not MODEL.lines[li].is_arc)
        assert refinement_objective(cam, kps, MODEL) == pytest.approx(total, rel=1e-9)


class TestRefine:
    def test_truth_unchanged(self):
        kps = render_keypoints(FIG_CAMERA)
        assert refine_params(FIG_CAMERA, kps, MODEL) == FIG_CAMERA

    def test_pan_offset_recovered(self):
        kps = render_keypoints(FIG_CAMERA)
        start = _replace(FIG_CAMERA, pan=FIG_CAMERA.pan + 0.10)
        out = refine_params(start, kps, MODEL, RefinementConfig(polish=False))
        assert refinement_objective(out, kps, MODEL) < refinement_objective(start, kps, MODEL)
        assert abs(out.pan - FIG_CAMERA.pan) < 0.05

    def test_search_only_deltas_on_grid(self):
        kps = render_keypoints(FIG_CAMERA)
        start = _replace(FIG_CAMERA, pan=FIG_CAMERA.pan + 0.10, x=FIG_CAMERA.x - 1.0)
        cfg = RefinementConfig(polish=False, max_sweeps=1)
        out = refine_params(start, kps, MODEL, cfg)
        for name in CameraParams.NAMES:
            d = getattr(out, name) - getattr(start, name)
            assert min(abs(d - g) for g in cfg.deltas[name]) < 1e-12

    def test_keypoint_free(self):
        with pytest.warns(CalibrationWarning):
            assert refine_params(FIG_CAMERA, [], MODEL) is FIG_CAMERA

    def test_never_worse(self, rng):
        from gsrecon.synthetic import sample_camera

        for _ in range(15):
            cam = sample_camera(rng)
            kps = render_keypoints(cam, 2.0, rng)
            if len(kps) < 2:
                continue
            start = CameraParams.from_array(cam.as_array() + rng.uniform(-0.1, 0.1, 7))
            out = refine_params(start, kps, MODEL)
            assert refinement_objective(out, kps, MODEL) <= refinement_objective(start, kps, MODEL)

    def test_deterministic_and_sequence(self, rng):
        kps = render_keypoints(FIG_CAMERA, 1.0, rng)
        start = _replace(FIG_CAMERA, tilt=FIG_CAMERA.tilt - 0.04, y=FIG_CAMERA.y + 1.0)
        a = refine_params(start, kps, MODEL)
        b = refine_params(start, kps, MODEL)
        assert a.as_array().tobytes() == b.as_array().tobytes()
        seq = refine_sequence([start, FIG_CAMERA], [kps, []], MODEL)
        assert seq[0] == a and seq[1] == FIG_CAMERA

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            RefinementConfig(outlier_threshold=0)
        bad = RefinementConfig().deltas
        bad["pan"] = (0.1, 0.2)
        with pytest.raises(ConfigError):
            RefinementConfig(deltas=bad)


def _seq(rows):
    return [CameraParams.from_array(r) for r in rows]


class TestSmoother:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SmootherConfig(window=30, delay=15)
        with pytest.raises(ConfigError):
            SmootherConfig(window=3, order=3, delay=1)
        with pytest.raises(ConfigError):
            SmootherConfig(angle_clamp=0)

    def test_short_unchanged(self):
        seq = [FIG_CAMERA] * 10
        assert smooth_sequence(seq) == seq

    def test_constant(self):
        seq = [FIG_CAMERA] * 60
        out = smooth_sequence(seq)
        assert len(out) == 60
        for p in out:
            assert np.allclose(p.as_array(), FIG_CAMERA.as_array(), atol=1e-12)

    def test_linear_and_quadratic(self):
        t = np.arange(80.0)
        base = np.tile(FIG_CAMERA.as_array(), (80, 1))
        base[:, 3] += 0.001 * t
        base[:, 0] += 0.02 * t - 1e-4 * t ** 2
        out = np.array([p.as_array() for p in smooth_sequence(_seq(base))])
        assert np.abs(out[15:-15] - base[15:-15]).max() < 1e-9

    def test_spike_clamped(self):
        rows = np.tile(FIG_CAMERA.as_array(), (61, 1))
        rows[30, 3] += math.radians(10)
        out = np.array([p.as_array() for p in smooth_sequence(_seq(rows))])
        corr = out[:, 3] - rows[:, 3]
        assert abs(corr[30]) == pytest.approx(math.radians(2), abs=1e-15)
        assert out[30, 3] < rows[30, 3]
        assert (np.abs(corr) <= math.radians(2) + 1e-15).all()

    def test_matches_filter_weights(self, rng):
        rows = np.tile(FIG_CAMERA.as_array(), (50, 1)) + rng.normal(size=(50, 7)) * 0.001
        out = np.array([p.as_array() for p in smooth_sequence(_seq(rows))])
        w = savgol_coeffs(31, 2)
        for k in range(15, 35):
            assert np.allclose(out[k], w @ rows[k - 15:k + 16], atol=1e-12)

    def test_clamps_random_walk(self, rng):
        rows = np.tile(FIG_CAMERA.as_array(), (2000, 1)) + np.cumsum(rng.normal(size=(2000, 7)) * 0.05, 0)
        rows[:, 6] = np.clip(rows[:, 6], 0.3, 2.5)
        out = np.array([p.as_array() for p in smooth_sequence(_seq(rows))])
        d = np.abs(out - rows)
        assert (d[:, :3] <= 2.0 + 1e-12).all()
        assert (d[:, 3:] <= math.radians(2) + 1e-12).all()
