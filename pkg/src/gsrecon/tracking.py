"""Preliminary multi-athlete tracking in pitch coordinates.

A constant-velocity Kalman filter per track, a squared-Mahalanobis gate, and
an appearance term taken from a bounded gallery of ReID embeddings. Two hard
restrictions make pairs infeasible: a detection facing the opposite way from
the track's last orientation, and a team embedding too far from the track's
running team mean. Assignment is solved optimally per frame.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DomainError
from .geometry import DEFAULT_HEIGHT, DEFAULT_WIDTH, CameraParams, pixels_to_ground
from .postprocess import TrackRecord, Tracklet

log = logging.getLogger(__name__)

ORIENTATIONS = ("left", "up", "right", "down")
OPPOSITE = {"left": "right", "right": "left", "up": "down", "down": "up"}
CLASSES = ("athlete", "ball")

TENTATIVE, CONFIRMED, TERMINATED = "tentative", "confirmed", "terminated"

_UNIT_TOL = 1e-6


def _check_unit(v: np.ndarray, name: str) -> None:
    if v.ndim != 1 or abs(float(np.linalg.norm(v)) - 1.0) > _UNIT_TOL:
        raise DomainError(f"{name} embedding must be a unit vector")


def _check_dist(p: np.ndarray, name: str) -> None:
    if p.shape != (10,) or (p < 0).any() or abs(float(p.sum()) - 1.0) > _UNIT_TOL:
        raise DomainError(f"{name} must be a 10-way probability distribution")


@dataclass
class Detection:
    """One observed athlete or ball in one frame.

    ``jersey_first`` holds probabilities for (none, 1..9) and ``jersey_second``
    for digits 0..9. ``pitch`` is filled in once a camera is known.
    """

    frame: int
    bbox: Tuple[float, float, float, float]
    reid: np.ndarray
    team: np.ndarray
    jersey_first: np.ndarray
    jersey_second: np.ndarray
    cls: str = "athlete"
    conf: float = 1.0
    orient: str = "up"
    anomaly: bool = False
    pitch: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        self.bbox = tuple(float(v) for v in self.bbox)
        self.reid = np.asarray(self.reid, float)
        self.team = np.asarray(self.team, float)
        self.jersey_first = np.asarray(self.jersey_first, float)
        self.jersey_second = np.asarray(self.jersey_second, float)
        if len(self.bbox) != 4:
            raise DomainError("bbox must be (x, y, w, h)")
        if self.cls not in CLASSES:
            raise DomainError(f"unknown detection class {self.cls!r}")
        if not 0.0 <= self.conf <= 1.0:
            raise DomainError(f"confidence out of range: {self.conf}")
        if self.orient not in ORIENTATIONS:
            raise DomainError(f"unknown orientation {self.orient!r}")
        _check_unit(self.reid, "reid")
        _check_unit(self.team, "team")
        _check_dist(self.jersey_first, "jersey_first")
        _check_dist(self.jersey_second, "jersey_second")

    @property
    def foot(self) -> Tuple[float, float]:
        """Bottom-centre of the box, where the athlete touches the ground."""
        x, y, w, h = self.bbox
        return x + w / 2.0, y + h


def filter_anomalies(dets: Sequence[Detection]) -> List[Detection]:
    return [d for d in dets if not d.anomaly]


def locate_on_pitch(dets: Sequence[Detection], camera: CameraParams, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT) -> List[Detection]:
    """Attach ground positions; detections whose foot ray misses the ground are dropped."""
    dets = list(dets)
    if not dets:
        return []
    feet = np.array([d.foot for d in dets])
    ground, valid = pixels_to_ground(camera, feet, width, height)
    out = []
    for d, g, ok in zip(dets, ground, valid):
        if ok:
            out.append(dataclasses.replace(d, pitch=(float(g[0]), float(g[1]))))
        else:
            log.debug("frame %d: detection foot ray misses the ground", d.frame)
    return out


@dataclass
class TrackerConfig:
    """Defaults assume 30 fps and metre-scale measurement noise."""

    fps: float = 30.0
    accel_noise: float = 3.0  # m/s^2, white-noise acceleration
    measurement_noise: float = 1.0  # m, ground-plane error of a foot point
    init_velocity_sigma: float = 3.0  # m/s
    gate: float = 9.4877  # squared Mahalanobis, chi-square 0.95 with 2 dof
    max_distance: Optional[float] = None  # optional hard Euclidean gate, m
    appearance_weight: float = 0.5
    max_misses: int = 30
    confirm_hits: int = 3
    gallery_size: int = 50
    team_gate: float = 0.35
    orientation_gate: bool = True
    min_confidence: float = 0.0
    ball_max_distance: float = 10.0
    filtered_output: bool = True

    def __post_init__(self):
        positive = dict(
            fps=self.fps, accel_noise=self.accel_noise, measurement_noise=self.measurement_noise,
            init_velocity_sigma=self.init_velocity_sigma, gate=self.gate, team_gate=self.team_gate,
            ball_max_distance=self.ball_max_distance,
        )
        for name, v in positive.items():
            if not v > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_distance is not None and not self.max_distance > 0:
            raise ConfigError("max_distance must be positive")
        if not 0.0 <= self.appearance_weight <= 1.0:
            raise ConfigError("appearance_weight must be in [0, 1]")
        if self.max_misses < 0 or self.confirm_hits < 1 or self.gallery_size < 1:
            raise ConfigError("max_misses >= 0, confirm_hits >= 1 and gallery_size >= 1 required")


@dataclass(frozen=True)
class TrackState:
    id: int
    mean: np.ndarray
    cov: np.ndarray
    gallery: np.ndarray
    team_sum: np.ndarray
    last_orient: str
    age: int = 1
    hits: int = 1
    misses: int = 0
    status: str = TENTATIVE
    last_frame: int = 0
    pending: Tuple[int, ...] = ()  # detection references buffered while tentative

    @property
    def team_mean(self) -> np.ndarray:
        n = np.linalg.norm(self.team_sum)
        return self.team_sum / n if n > 0 else self.team_sum

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]


def _transition(dt: float) -> np.ndarray:
    f = np.eye(4)
    f[0, 2] = f[1, 3] = dt
    return f


def _process_noise(dt: float, accel: float) -> np.ndarray:
    q = np.zeros((4, 4))
    a, b, c = dt ** 3 / 3.0, dt ** 2 / 2.0, dt
    for i in (0, 1):
        q[i, i], q[i, i + 2], q[i + 2, i], q[i + 2, i + 2] = a, b, b, c
    return q * accel ** 2


_H = np.hstack([np.eye(2), np.zeros((2, 2))])


def predict(track: TrackState, dt: float, config: Optional[TrackerConfig] = None) -> TrackState:
    """Constant-velocity Kalman prediction."""
    if not dt > 0:
        raise DomainError("dt must be positive")
    config = config or TrackerConfig()
    f = _transition(dt)
    cov = f @ track.cov @ f.T + _process_noise(dt, config.accel_noise)
    cov = 0.5 * (cov + cov.T)
    return dataclasses.replace(track, mean=f @ track.mean, cov=cov, age=track.age + 1)


def _innovation(track: TrackState, z: np.ndarray, config: TrackerConfig):
    s = _H @ track.cov @ _H.T + np.eye(2) * config.measurement_noise ** 2
    r = z - _H @ track.mean
    return r, s


def mahalanobis_sq(track: TrackState, z, config: Optional[TrackerConfig] = None) -> float:
    config = config or TrackerConfig()
    r, s = _innovation(track, np.asarray(z, float), config)
    return float(r @ np.linalg.solve(s, r))


def _kalman_update(track: TrackState, z: np.ndarray, config: TrackerConfig) -> Tuple[np.ndarray, np.ndarray]:
    r, s = _innovation(track, z, config)
    k = track.cov @ _H.T @ np.linalg.inv(s)
    ikh = np.eye(4) - k @ _H
    rm = np.eye(2) * config.measurement_noise ** 2
    cov = ikh @ track.cov @ ikh.T + k @ rm @ k.T  # Joseph form keeps it positive definite
    return track.mean + k @ r, 0.5 * (cov + cov.T)


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(1.0 - a @ b / max(np.linalg.norm(a) * np.linalg.norm(b), 1e-12))


def association_cost(track: TrackState, det: Detection, config: Optional[TrackerConfig] = None) -> float:
    """Blended motion/appearance cost, or ``inf`` when a gate rules the pair out."""
    config = config or TrackerConfig()
    if det.pitch is None:
        raise DomainError("detection has no pitch position")
    z = np.asarray(det.pitch, float)
    d2 = mahalanobis_sq(track, z, config)
    if d2 > config.gate:
        return math.inf
    if config.max_distance is not None and np.linalg.norm(z - track.position) > config.max_distance:
        return math.inf
    if config.orientation_gate and OPPOSITE[track.last_orient] == det.orient:
        return math.inf
    if _cosine_distance(track.team_mean, det.team) > config.team_gate:
        return math.inf
    appearance = float(np.min(1.0 - track.gallery @ det.reid))
    w = config.appearance_weight
    return (1.0 - w) * d2 / config.gate + w * max(appearance, 0.0)


def cost_matrix(tracks: Sequence[TrackState], dets: Sequence[Detection], config: Optional[TrackerConfig] = None) -> np.ndarray:
    """All-pairs :func:`association_cost`, vectorised over tracks and detections."""
    config = config or TrackerConfig()
    nt, nd = len(tracks), len(dets)
    if nt == 0 or nd == 0:
        return np.full((nt, nd), math.inf)
    if any(d.pitch is None for d in dets):
        raise DomainError("detection has no pitch position")
    z = np.array([d.pitch for d in dets], float)
    pos = np.array([t.mean[:2] for t in tracks])
    s = np.array([_H @ t.cov @ _H.T for t in tracks]) + np.eye(2) * config.measurement_noise ** 2
    r = z[None, :, :] - pos[:, None, :]
    d2 = np.einsum("tdi,tij,tdj->td", r, np.linalg.inv(s), r)
    ok = d2 <= config.gate
    if config.max_distance is not None:
        ok &= np.linalg.norm(r, axis=-1) <= config.max_distance
    if config.orientation_gate:
        opposite = np.array([[OPPOSITE[t.last_orient] == d.orient for d in dets] for t in tracks])
        ok &= ~opposite
    team = np.array([t.team_mean for t in tracks])
    det_team = np.array([d.team for d in dets])
    norms = np.maximum(np.linalg.norm(team, axis=1)[:, None] * np.linalg.norm(det_team, axis=1)[None], 1e-12)
    ok &= 1.0 - team @ det_team.T / norms <= config.team_gate
    det_reid = np.array([d.reid for d in dets])
    appearance = np.stack([np.maximum((1.0 - t.gallery @ det_reid.T).min(0), 0.0) for t in tracks])
    w = config.appearance_weight
    cost = (1.0 - w) * d2 / config.gate + w * appearance
    return np.where(ok, cost, math.inf)


def solve_assignment(cost: np.ndarray) -> List[Tuple[int, int]]:
    """Most feasible pairs first, then the smallest total cost among those.

    Infeasible entries are ``inf``. Each is replaced by a constant larger than
    any possible sum of feasible costs, so the optimal assignment never trades
    a feasible pair away for a cheaper total.
    """
    cost = np.asarray(cost, float)
    if cost.size == 0:
        return []
    feasible = np.isfinite(cost)
    if not feasible.any():
        return []
    big = (np.abs(cost[feasible]).max() + 1.0) * (min(cost.shape) + 1) * 10.0
    rows, cols = linear_sum_assignment(np.where(feasible, cost, big))
    return [(int(r), int(c)) for r, c in zip(rows, cols) if feasible[r, c]]


def associate(tracks: Sequence[TrackState], dets: Sequence[Detection], config: Optional[TrackerConfig] = None):
    """Optimal one-to-one matching; returns (pairs, unmatched track idx, unmatched det idx).

    Tracks are considered in id order and detections in input order, which
    fixes the outcome when several assignments cost the same.
    """
    order = sorted(range(len(tracks)), key=lambda i: tracks[i].id)
    cost = cost_matrix([tracks[i] for i in order], dets, config)
    pairs = sorted((order[r], c) for r, c in solve_assignment(cost))
    mt = {p[0] for p in pairs}
    md = {p[1] for p in pairs}
    return pairs, [i for i in order if i not in mt], [j for j in range(len(dets)) if j not in md]


@dataclass
class FrameOutput:
    frame: int
    records: List[Tuple[int, int]]  # (track id, detection reference) for confirmed tracks
    positions: Dict[int, Tuple[float, float]] = field(default_factory=dict)  # filtered position per emitted reference


class Tracker:
    """Sequential tracker state.

    Detection references are caller-chosen integers, unique over the whole
    stream; by default detections are numbered in arrival order.
    """

    def __init__(self, config: Optional[TrackerConfig] = None):
        self.config = config or TrackerConfig()
        self.tracks: List[TrackState] = []
        self.next_id = 1
        self.frame: Optional[int] = None
        self._estimates: Dict[int, Tuple[float, float]] = {}
        self._auto_ref = 0

    def _spawn(self, det: Detection, ref: int, frame: int) -> TrackState:
        cfg = self.config
        mean = np.array([det.pitch[0], det.pitch[1], 0.0, 0.0])
        cov = np.diag([cfg.measurement_noise ** 2] * 2 + [cfg.init_velocity_sigma ** 2] * 2)
        status = CONFIRMED if cfg.confirm_hits <= 1 else TENTATIVE
        t = TrackState(
            id=self.next_id, mean=mean, cov=cov, gallery=det.reid[None].copy(), team_sum=det.team.copy(),
            last_orient=det.orient, status=status, last_frame=frame, pending=(ref,),
        )
        self._estimates[ref] = (float(det.pitch[0]), float(det.pitch[1]))
        self.next_id += 1
        return t

    def step(self, frame: int, dets: Sequence[Detection], refs: Optional[Sequence[int]] = None) -> FrameOutput:
        cfg = self.config
        if refs is None:
            refs = list(range(self._auto_ref, self._auto_ref + len(dets)))
            self._auto_ref += len(dets)
        refs = list(refs)
        keep = [i for i, d in enumerate(dets) if not d.anomaly and d.cls == "athlete" and d.conf >= cfg.min_confidence and d.pitch is not None]
        dets = [dets[i] for i in keep]
        refs = [refs[i] for i in keep]
        if self.frame is not None and frame <= self.frame:
            raise DomainError(f"frames must increase (got {frame} after {self.frame})")
        gap = 1 if self.frame is None else frame - self.frame
        self.frame = frame
        dt = gap / cfg.fps
        tracks = [predict(t, dt, cfg) for t in self.tracks]
        pairs, unmatched_tracks, unmatched_dets = associate(tracks, dets, cfg)

        emitted: List[Tuple[int, int]] = []
        survivors: List[TrackState] = []
        matched = {ti: dj for ti, dj in pairs}
        for ti, t in enumerate(tracks):
            if ti in matched:
                d = dets[matched[ti]]
                mean, cov = _kalman_update(t, np.asarray(d.pitch, float), cfg)
                self._estimates[refs[matched[ti]]] = (float(mean[0]), float(mean[1]))
                gallery = np.vstack([t.gallery, d.reid[None]])[-cfg.gallery_size:]
                hits = t.hits + 1
                pending = t.pending + (refs[matched[ti]],)
                status = t.status
                if status == TENTATIVE and hits >= cfg.confirm_hits:
                    status = CONFIRMED
                if status == CONFIRMED:
                    emitted.extend((t.id, r) for r in pending)
                    pending = ()
                survivors.append(dataclasses.replace(
                    t, mean=mean, cov=cov, gallery=gallery, team_sum=t.team_sum + d.team, last_orient=d.orient,
                    hits=hits, misses=0, status=status, last_frame=frame, pending=pending,
                ))
            else:
                misses = t.misses + 1
                if t.status == TENTATIVE or misses > cfg.max_misses:
                    for r in t.pending:
                        self._estimates.pop(r, None)
                    continue
                survivors.append(dataclasses.replace(t, misses=misses))
        for dj in unmatched_dets:
            t = self._spawn(dets[dj], refs[dj], frame)
            if t.status == CONFIRMED:
                emitted.extend((t.id, r) for r in t.pending)
                t = dataclasses.replace(t, pending=())
            survivors.append(t)
        self.tracks = survivors
        positions = {r: self._estimates.pop(r) for _, r in emitted}
        return FrameOutput(frame, sorted(emitted), positions)


def _record(det: Detection, pos: Tuple[float, float]) -> TrackRecord:
    return TrackRecord(
        frame=det.frame, x=pos[0], y=pos[1], reid=det.reid, team=det.team,
        jersey_first=det.jersey_first, jersey_second=det.jersey_second, orient=det.orient,
    )


def track_ball(dets_by_frame: Dict[int, Sequence[Detection]], config: Optional[TrackerConfig] = None) -> List[Tuple[int, float, float]]:
    """Single-object nearest-neighbour ball track: (frame, x, y) per frame with a ball."""
    config = config or TrackerConfig()
    out: List[Tuple[int, float, float]] = []
    last: Optional[np.ndarray] = None
    for frame in sorted(dets_by_frame):
        balls = [d for d in dets_by_frame[frame] if d.cls == "ball" and not d.anomaly and d.pitch is not None]
        if not balls:
            continue
        pick = None
        if last is not None:
            dist = [float(np.linalg.norm(np.asarray(b.pitch) - last)) for b in balls]
            j = int(np.argmin(dist))
            if dist[j] <= config.ball_max_distance:
                pick = balls[j]
        if pick is None:
            pick = max(balls, key=lambda b: (b.conf, -b.pitch[0], -b.pitch[1]))
        last = np.asarray(pick.pitch, float)
        out.append((frame, float(last[0]), float(last[1])))
    return out


def run_tracker(
    dets_by_frame: Dict[int, Sequence[Detection]], config: Optional[TrackerConfig] = None, frames: Optional[Sequence[int]] = None,
) -> List[Tracklet]:
    """Track a whole clip; returns one tracklet per confirmed track, ordered by id.

    Record positions are the filtered track estimates when
    ``config.filtered_output`` is set, else the measured pitch positions.

    ``frames`` defaults to every index between the first and last key of
    ``dets_by_frame`` so that empty frames still count as misses.
    """
    if frames is None:
        frames = range(min(dets_by_frame), max(dets_by_frame) + 1) if dets_by_frame else []
    tracker = Tracker(config)
    filtered = tracker.config.filtered_output
    flat: List[Detection] = []
    pos: Dict[int, Tuple[float, float]] = {}
    per_track: Dict[int, List[int]] = {}
    for frame in frames:
        dets = list(dets_by_frame.get(frame, ()))
        refs = list(range(len(flat), len(flat) + len(dets)))
        flat.extend(dets)
        out = tracker.step(frame, dets, refs)
        for tid, ref in out.records:
            per_track.setdefault(tid, []).append(ref)
            pos[ref] = out.positions[ref] if filtered else flat[ref].pitch
    return [
        Tracklet(tid, [_record(flat[r], pos[r]) for r in sorted(refs, key=lambda r: flat[r].frame)])
        for tid, refs in sorted(per_track.items())
    ]


def identity_switches(assignments: Dict[int, List[Tuple[int, int]]]) -> int:
    """Count track-id changes along each true identity's (frame, track id) sequence."""
    switches = 0
    for seq in assignments.values():
        ids = [tid for _, tid in sorted(seq)]
        switches += sum(1 for a, b in zip(ids, ids[1:]) if a != b)
    return switches
