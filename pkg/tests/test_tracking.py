import itertools
import math

import numpy as np
import pytest

from gsrecon.errors import ConfigError, DomainError
from gsrecon.postprocess import encode_jersey
from gsrecon.tracking import (
    Detection,
    TrackState,
    Tracker,
    TrackerConfig,
    associate,
    association_cost,
    cost_matrix,
    filter_anomalies,
    identity_switches,
    mahalanobis_sq,
    predict,
    run_tracker,
    solve_assignment,
    track_ball,
)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def det(x, y, frame=0, reid=(1, 0, 0), team=(1, 0), orient="up", anomaly=False, cls="athlete", conf=1.0):
    first, second = encode_jersey(None)
    return Detection(frame, (0, 0, 1, 1), unit(reid), unit(team), first, second, cls=cls, conf=conf, orient=orient,
                     anomaly=anomaly, pitch=(float(x), float(y)))


def track(x, y, vx=0.0, vy=0.0, reid=(1, 0, 0), team=(1, 0), orient="up", tid=1, var=1.0):
    return TrackState(id=tid, mean=np.array([x, y, vx, vy], float), cov=np.eye(4) * var,
                      gallery=unit(reid)[None], team_sum=unit(team), last_orient=orient)


def brute_force(cost):
    """Most feasible pairs, then least total cost."""
    nt, nd = cost.shape
    best = (0, 0.0)
    best_pairs = []
    for k in range(min(nt, nd), 0, -1):
        for rows in itertools.combinations(range(nt), k):
            for cols in itertools.permutations(range(nd), k):
                c = [cost[r, col] for r, col in zip(rows, cols)]
                if not all(np.isfinite(c)):
                    continue
                key = (k, -sum(c))
                if key > best:
                    best, best_pairs = key, list(zip(rows, cols))
        if best_pairs:
            break
    return best, best_pairs


class TestDetection:
    def test_validation(self):
        first, second = encode_jersey(7)
        with pytest.raises(DomainError):
            Detection(0, (0, 0, 1, 1), np.array([2.0, 0]), unit([1, 0]), first, second)
        with pytest.raises(DomainError):
            Detection(0, (0, 0, 1, 1), unit([1, 0]), unit([1, 0]), first * 2, second)
        with pytest.raises(DomainError):
            Detection(0, (0, 0, 1, 1), unit([1, 0]), unit([1, 0]), first, second, orient="north")
        with pytest.raises(DomainError):
            Detection(0, (0, 0, 1, 1), unit([1, 0]), unit([1, 0]), first, second, conf=1.2)

    def test_foot(self):
        assert det(0, 0).foot == (0.5, 1.0)


class TestAnomalies:
    def test_filter(self):
        a, b, c = det(0, 0), det(1, 0, anomaly=True), det(2, 0)
        assert filter_anomalies([a, c]) == [a, c]
        assert filter_anomalies([b, b]) == []
        assert filter_anomalies([a, b, c]) == [a, c]


class TestPredict:
    def test_static(self):
        t = predict(track(3, 4), 1 / 30)
        assert np.array_equal(t.position, [3, 4])

    def test_velocity(self):
        t = predict(track(3, 4, vx=1.0), 1.0)
        assert t.position[0] == pytest.approx(4.0)

    def test_covariance_grows(self):
        t0 = track(0, 0)
        t1 = predict(t0, 0.5)
        assert np.trace(t1.cov) > np.trace(t0.cov)
        assert np.allclose(t1.cov, t1.cov.T)
        assert np.linalg.eigvalsh(t1.cov).min() > 0

    def test_bad_dt(self):
        with pytest.raises(DomainError):
            predict(track(0, 0), 0.0)


class TestCost:
    def test_zero_at_prediction(self):
        assert association_cost(track(5, 5), det(5, 5)) == 0.0

    def test_orientation_gate(self):
        assert association_cost(track(0, 0, orient="left"), det(0, 0, orient="right")) == math.inf
        assert association_cost(track(0, 0, orient="up"), det(0, 0, orient="down")) == math.inf
        assert association_cost(track(0, 0, orient="left"), det(0, 0, orient="up")) < math.inf
        off = TrackerConfig(orientation_gate=False)
        assert association_cost(track(0, 0, orient="left"), det(0, 0, orient="right"), off) < math.inf

    def test_distance_gate(self):
        assert association_cost(track(0, 0), det(50, 0)) == math.inf
        cfg = TrackerConfig(max_distance=2.0)
        assert association_cost(track(0, 0, var=100), det(3, 0), cfg) == math.inf

    def test_team_gate(self):
        assert association_cost(track(0, 0, team=(1, 0)), det(0, 0, team=(0, 1))) == math.inf

    def test_formula(self):
        cfg = TrackerConfig(appearance_weight=0.3)
        t, d = track(0, 0), det(1.0, 0.5, reid=(1, 1, 0))
        d2 = mahalanobis_sq(t, d.pitch, cfg)
        assert d2 == pytest.approx((1 + 0.25) / 2)  # cov 1 plus measurement variance 1
        expected = 0.7 * d2 / cfg.gate + 0.3 * (1 - 1 / math.sqrt(2))
        assert association_cost(t, d, cfg) == pytest.approx(expected, abs=1e-12)

    def test_matrix_agrees(self, rng):
        tracks = [track(*rng.uniform(-3, 3, 2), reid=rng.normal(size=3), tid=i + 1, orient=o)
                  for i, o in enumerate(["up", "left", "down", "right"])]
        dets = [det(*rng.uniform(-3, 3, 2), reid=rng.normal(size=3), orient=o) for o in ["up", "right", "left", "down", "up"]]
        m = cost_matrix(tracks, dets)
        for i, t in enumerate(tracks):
            for j, d in enumerate(dets):
                c = association_cost(t, d)
                assert (m[i, j] == c) or m[i, j] == pytest.approx(c, abs=1e-12)


class TestAssociate:
    def test_single(self):
        pairs, ut, ud = associate([track(0, 0)], [det(0.1, 0)])
        assert pairs == [(0, 0)] and ut == [] and ud == []

    def test_none_feasible(self):
        pairs, ut, ud = associate([track(0, 0), track(10, 0, tid=2)], [det(40, 0), det(-40, 0)])
        assert pairs == [] and ut == [0, 1] and ud == [0, 1]

    def test_embeddings_resolve_crossing(self):
        t = [track(0, 0, reid=(1, 0, 0), tid=1), track(0.2, 0, reid=(0, 1, 0), tid=2)]
        d = [det(0.2, 0, reid=(1, 0, 0)), det(0, 0, reid=(0, 1, 0))]
        pairs, _, _ = associate(t, d)
        assert pairs == [(0, 0), (1, 1)]
        _, oracle = brute_force(cost_matrix(t, d))
        assert sorted(oracle) == pairs

    def test_brute_force_random(self, rng):
        for _ in range(300):
            nt, nd = rng.integers(0, 6), rng.integers(0, 6)
            cost = rng.uniform(0, 1, (nt, nd))
            cost[rng.uniform(size=(nt, nd)) < 0.4] = math.inf
            pairs = solve_assignment(cost)
            (k, neg), oracle = brute_force(cost) if nt and nd else ((0, 0.0), [])
            assert len(pairs) == k
            assert sum(cost[r, c] for r, c in pairs) == pytest.approx(-neg, abs=1e-9)
            assert len({r for r, _ in pairs}) == len(pairs) == len({c for _, c in pairs})


def _walker_dets(n_frames, players, rng=None):
    """Players on parallel lanes walking at 1.5 m/s with distinct embeddings."""
    out = {}
    for f in range(n_frames):
        out[f] = [det(-40 + 1.5 * f / 30, -20 + 4 * k, frame=f, reid=np.eye(players)[k], orient="right")
                  for k in range(players)]
    return out


class TestTracker:
    def test_empty_frame_misses(self):
        tr = Tracker(TrackerConfig(confirm_hits=1))
        tr.step(0, [det(0, 0)])
        tr.step(1, [])
        assert tr.tracks[0].misses == 1

    def test_frames_increase(self):
        tr = Tracker()
        tr.step(3, [])
        with pytest.raises(DomainError):
            tr.step(3, [])

    def test_confirm_and_backfill(self):
        tr = Tracker(TrackerConfig(confirm_hits=3))
        outs = [tr.step(f, [det(0, 0, frame=f)], [10 + f]) for f in range(4)]
        assert outs[0].records == [] and outs[1].records == []
        assert outs[2].records == [(1, 10), (1, 11), (1, 12)]
        assert outs[3].records == [(1, 13)]

    def test_single_player(self):
        dets = _walker_dets(100, 1)
        tracklets = run_tracker(dets)
        assert len(tracklets) == 1
        assert len(tracklets[0].records) == 100

    def test_many_players_no_switches(self):
        dets = _walker_dets(90, 8)
        tracklets = run_tracker(dets)
        assert len(tracklets) == 8
        for t in tracklets:
            ys = {round(r.y, 6) for r in t.records}
            assert len({round(y / 4) for y in ys}) == 1

    def test_filtered_vs_measured(self, rng):
        dets = {f: [det(rng.normal(0, 0.5), rng.normal(0, 0.5), frame=f)] for f in range(60)}
        raw = run_tracker(dets, TrackerConfig(filtered_output=False))
        filt = run_tracker(dets, TrackerConfig(filtered_output=True))
        assert [(r.x, r.y) for r in raw[0].records] == [dets[f][0].pitch for f in range(60)]
        assert np.std([r.x for r in filt[0].records]) < np.std([r.x for r in raw[0].records])

    def test_covariance_positive(self, rng):
        tr = Tracker(TrackerConfig(confirm_hits=1))
        for f in range(200):
            tr.step(f, [det(rng.normal(), rng.normal(), frame=f)] if f % 7 else [])
            for t in tr.tracks:
                assert np.allclose(t.cov, t.cov.T)
                assert np.linalg.eigvalsh(t.cov).min() > 0

    def test_gallery_bounded(self):
        tr = Tracker(TrackerConfig(gallery_size=5))
        for f in range(20):
            tr.step(f, [det(0, 0, frame=f)])
        assert tr.tracks[0].gallery.shape[0] == 5

    def test_orientation_never_flips(self, rng):
        dets = {}
        for f in range(120):
            dets[f] = [det(rng.normal(0, 0.3), rng.normal(0, 0.3), frame=f, orient=rng.choice(["left", "up", "right", "down"]))]
        tracklets = run_tracker(dets, TrackerConfig(confirm_hits=1))
        for t in tracklets:
            for a, b in zip(t.records, t.records[1:]):
                if b.frame == a.frame + 1:
                    assert {a.orient, b.orient} not in ({"left", "right"}, {"up", "down"})

    def test_deterministic(self):
        dets = _walker_dets(40, 5)
        a, b = run_tracker(dets), run_tracker(dets)
        assert [[(r.frame, r.x, r.y) for r in t.records] for t in a] == [[(r.frame, r.x, r.y) for r in t.records] for t in b]

    def test_ball_bypasses_tracker(self):
        dets = {f: [det(f * 0.1, 0, frame=f, cls="ball"), det(5, 5, frame=f)] for f in range(10)}
        tracklets = run_tracker(dets)
        assert len(tracklets) == 1
        assert all(r.x == pytest.approx(5.0) for r in tracklets[0].records)
        ball = track_ball(dets)
        assert [b[0] for b in ball] == list(range(10))
        assert ball[3][1] == pytest.approx(0.3)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrackerConfig(appearance_weight=1.5)
        with pytest.raises(ConfigError):
            TrackerConfig(gate=0)


def test_identity_switches():
    assert identity_switches({1: [(0, 5), (1, 5), (2, 6)], 2: [(0, 7), (1, 7)]}) == 1
