"""Synthetic matches with exact ground truth.

Two teams and referees move smoothly around formation homes while a wide
broadcast camera jitters slightly. Rendering turns the truth into the same
records the perception stack would produce: boxes, embeddings, jersey head
outputs, orientations, pitch keypoints and noisy initial cameras.

Every frame draws its noise from its own generator seeded by (seed, frame),
and every draw happens whatever the noise level. Raising one knob therefore
leaves all other random choices untouched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .calibration import DetectedKeypoint
from .errors import ConfigError
from .geometry import CameraParams, world_to_ndc, world_to_pixel
from .pitch import LENGTH, PENALTY_AREA_DEPTH, PENALTY_AREA_WIDTH, WIDTH, standard_pitch
from .postprocess import TrackRecord, Tracklet, encode_jersey
from .tracking import ORIENTATIONS, OPPOSITE, Detection

CAMERA_CHANNELS = CameraParams.NAMES
PLAYER_HEIGHT = 1.8  # m
BOX_ASPECT = 0.4  # width / height
READING_CONF = 0.95  # mass on the top class of a clean jersey reading
MARGIN = 3.0  # m players may stray beyond the lines


@dataclass
class SimConfig:
    seed: int = 0
    fps: float = 30.0
    duration: float = 10.0  # s
    players_per_team: int = 11  # including the goalkeeper
    referees: int = 3
    width: int = 1920
    height: int = 1080
    pixel_sigma: float = 0.0  # px, boxes and keypoints
    embedding_sigma: float = 0.0  # per component, before renormalising
    jersey_confusion: float = 0.0
    dropout: float = 0.0
    anomaly_rate: float = 0.0
    camera_noise: Dict[str, float] = field(default_factory=lambda: {k: 0.0 for k in CAMERA_CHANNELS})
    camera_jitter: float = 0.01  # rad amplitude of the smooth pan/tilt walk
    position_jitter: float = 0.5  # m amplitude of the smooth position walk
    reid_dim: int = 128
    team_dim: int = 32
    max_speed: float = 9.0  # m/s
    max_accel: float = 4.0  # m/s^2
    include_ball: bool = True
    fragment_pieces: int = 0  # >0 also produces the fragmented ground-truth tracklet fixture

    def __post_init__(self):
        for name in ("jersey_confusion", "dropout", "anomaly_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        for name in ("pixel_sigma", "embedding_sigma", "camera_jitter", "position_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        unknown = set(self.camera_noise) - set(CAMERA_CHANNELS)
        if unknown:
            raise ConfigError(f"unknown camera noise channels {sorted(unknown)}")
        self.camera_noise = {k: float(self.camera_noise.get(k, 0.0)) for k in CAMERA_CHANNELS}
        if any(v < 0 for v in self.camera_noise.values()):
            raise ConfigError("camera noise must be >= 0")
        if self.fps <= 0 or self.duration <= 0 or self.players_per_team < 1 or self.referees < 0:
            raise ConfigError("fps and duration must be positive, players_per_team >= 1, referees >= 0")
        if self.team_dim < 5:
            raise ConfigError("team_dim must be >= 5 to hold five orthogonal kits")
        if self.max_speed <= 0 or self.max_accel <= 0 or self.fragment_pieces < 0:
            raise ConfigError("max_speed, max_accel must be positive and fragment_pieces >= 0")

    @property
    def frames(self) -> int:
        return int(round(self.duration * self.fps))


@dataclass(frozen=True)
class Identity:
    id: int
    role: str  # player | goalkeeper | referee
    side: str  # left | right | none
    jersey: Optional[int]
    label: str  # team cluster label
    reid: np.ndarray = field(repr=False)
    team: np.ndarray = field(repr=False)


@dataclass
class GroundTruth:
    fps: float
    cameras: List[CameraParams]
    identities: List[Identity]
    positions: np.ndarray  # (T, N, 2)
    orientations: np.ndarray  # (T, N) indices into ORIENTATIONS
    visible: np.ndarray  # (T, N)
    ball: np.ndarray  # (T, 2)
    team_latents: Dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.cameras)

    def gamestate(self) -> List[dict]:
        """Visible identities per frame as plain game-state rows."""
        out = []
        for f in range(self.n_frames):
            for n, ident in enumerate(self.identities):
                if self.visible[f, n]:
                    x, y = self.positions[f, n]
                    out.append(dict(frame=f, id=ident.id, x=float(x), y=float(y), role=ident.role, side=ident.side, jersey=ident.jersey))
        return out


def _aim(x, y, z, tx, ty) -> Tuple[float, float]:
    dx, dy = tx - x, ty - y
    return math.atan2(dx, -dy), math.atan2(math.hypot(dx, dy), -z)


def sample_camera(seed=None) -> CameraParams:
    """Random broadcast-style camera whose centre ray hits the pitch.

    Accepts a seed or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x, y, z = rng.uniform(-60, 60), rng.uniform(40, 110), rng.uniform(-40, -10)
    tx, ty = rng.uniform(-LENGTH / 2, LENGTH / 2), rng.uniform(-WIDTH / 2, WIDTH / 2)
    pan, tilt = _aim(x, y, z, tx, ty)
    return CameraParams(x, y, z, pan, tilt, 0.0, rng.uniform(0.4, 1.3))


def wide_camera() -> CameraParams:
    """Centred high camera that keeps the pitch plus a few metres in frame."""
    x, y, z = 0.0, 90.0, -35.0
    pan, tilt = _aim(x, y, z, 0.0, 0.0)
    return CameraParams(x, y, z, pan, tilt, 0.0, 1.04)


def _smooth_walk(rng, n: int, fps: float, amplitude: float, periods=(6.0, 17.0)) -> np.ndarray:
    """Bounded smooth signal: a sum of two slow sinusoids with random phases."""
    t = np.arange(n) / fps
    out = np.zeros(n)
    for p in periods:
        period = p * rng.uniform(0.8, 1.25)
        out += 0.5 * amplitude * np.sin(2 * math.pi * t / period + rng.uniform(0, 2 * math.pi))
    return out


FORMATION_DEPTHS = (30.0, 18.0, 7.0)  # m from the halfway line


def _orthonormal(rng, dim: int, k: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(dim, k)))
    return q.T


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=-1, keepdims=True)


def _homes(rng, n_out: int, sign: float) -> np.ndarray:
    """Outfield homes in three lines (defence, midfield, attack), 4-4-2 for ten players."""
    back = int(round(0.4 * n_out))
    mid = int(round(0.4 * n_out))
    rows = []
    for depth, k in zip(FORMATION_DEPTHS, (back, mid, n_out - back - mid)):
        for i in range(k):
            y = ((i + 0.5) / k - 0.5) * 48.0
            rows.append((sign * (depth + rng.uniform(-3.0, 3.0)), y + rng.uniform(-3.0, 3.0)))
    return np.array(rows, float).reshape(-1, 2)


def _orientation_index(v: np.ndarray, prev: int) -> int:
    if math.hypot(v[0], v[1]) < 0.3:
        return prev
    if abs(v[0]) >= abs(v[1]):
        new = ORIENTATIONS.index("right" if v[0] > 0 else "left")
    else:
        new = ORIENTATIONS.index("down" if v[1] > 0 else "up")
    if ORIENTATIONS[new] == OPPOSITE[ORIENTATIONS[prev]]:
        return prev  # a 180-degree turn needs at least one frame in between
    return new


def simulate_match(cfg: SimConfig) -> GroundTruth:
    rng = np.random.default_rng([cfg.seed, 0])
    T, dt = cfg.frames, 1.0 / cfg.fps
    team_lat = _orthonormal(rng, cfg.team_dim, 5)
    latents = dict(zip(("team_left", "team_right", "referee", "gk_left", "gk_right"), team_lat))

    idents: List[Identity] = []
    homes, bounds = [], []
    hl, hw = LENGTH / 2, WIDTH / 2
    pa_x, pa_y = hl - PENALTY_AREA_DEPTH, PENALTY_AREA_WIDTH / 2
    field_box = (-hl - MARGIN, -hw - MARGIN, hl + MARGIN, hw + MARGIN)
    for side, sign in (("left", -1.0), ("right", 1.0)):
        numbers = rng.choice(np.arange(2, 100), size=max(cfg.players_per_team - 1, 0), replace=False)
        gk_box = (-hl + 0.5, -pa_y + 2.0, -pa_x - 0.5, pa_y - 2.0) if side == "left" else (pa_x + 0.5, -pa_y + 2.0, hl - 0.5, pa_y - 2.0)
        idents.append(Identity(len(idents), "goalkeeper", side, 1, f"gk_{side}", np.zeros(0), latents[f"gk_{side}"]))
        homes.append((sign * (hl - 5.0), 0.0))
        bounds.append(gk_box)
        for k, h in enumerate(_homes(rng, cfg.players_per_team - 1, sign)):
            idents.append(Identity(len(idents), "player", side, int(numbers[k]), f"team_{side}", np.zeros(0), latents[f"team_{side}"]))
            homes.append(tuple(h))
            bounds.append(field_box)
    for _ in range(cfg.referees):
        idents.append(Identity(len(idents), "referee", "none", None, "referee", np.zeros(0), latents["referee"]))
        homes.append((rng.uniform(-20, 20), rng.uniform(-25, 25)))
        bounds.append(field_box)
    reid = _unit_rows(rng.normal(size=(len(idents), cfg.reid_dim)))
    idents = [Identity(i.id, i.role, i.side, i.jersey, i.label, reid[k], i.team) for k, i in enumerate(idents)]

    n = len(idents)
    homes = np.array(homes, float).reshape(-1, 2)
    bounds = np.array(bounds, float).reshape(-1, 4)
    is_gk = np.array([i.role == "goalkeeper" for i in idents])
    wander = np.where(is_gk[:, None], np.array([3.0, 8.0]), np.array([8.0, 8.0]))
    shift = _smooth_walk(rng, T, cfg.fps, 10.0, periods=(40.0, 90.0))
    offsets = np.stack([np.stack([_smooth_walk(rng, T, cfg.fps, wander[k, d]) for d in (0, 1)], -1) for k in range(n)], 1)
    targets = homes[None] + offsets
    targets[:, ~is_gk, 0] += shift[:, None]
    targets[..., 0] = np.clip(targets[..., 0], bounds[None, :, 0], bounds[None, :, 2])
    targets[..., 1] = np.clip(targets[..., 1], bounds[None, :, 1], bounds[None, :, 3])

    pos = np.zeros((T, n, 2))
    orient = np.zeros((T, n), int)
    pos[0] = targets[0]
    vel = np.zeros((n, 2))
    orient[0] = [ORIENTATIONS.index("right" if i.side == "left" else "left" if i.side == "right" else "down") for i in idents]
    for t in range(1, T):
        desired = 0.8 * (targets[t] - pos[t - 1])
        sp = np.linalg.norm(desired, axis=1, keepdims=True)
        desired *= np.minimum(1.0, cfg.max_speed / np.maximum(sp, 1e-12))
        acc = (desired - vel) / dt
        an = np.linalg.norm(acc, axis=1, keepdims=True)
        acc *= np.minimum(1.0, cfg.max_accel / np.maximum(an, 1e-12))
        vel = vel + acc * dt
        sp = np.linalg.norm(vel, axis=1, keepdims=True)
        vel *= np.minimum(1.0, cfg.max_speed / np.maximum(sp, 1e-12))
        p = pos[t - 1] + vel * dt
        clipped = np.column_stack([np.clip(p[:, 0], bounds[:, 0], bounds[:, 2]), np.clip(p[:, 1], bounds[:, 1], bounds[:, 3])])
        vel = np.where(clipped != p, 0.0, vel)
        pos[t] = clipped
        orient[t] = [_orientation_index(vel[k], orient[t - 1, k]) for k in range(n)]

    base = wide_camera().as_array()
    jitter = np.array([cfg.position_jitter] * 3 + [cfg.camera_jitter, cfg.camera_jitter, 0.0, 0.2 * cfg.camera_jitter])
    walk = np.stack([_smooth_walk(rng, T, cfg.fps, a) for a in jitter], 1)
    cameras = [CameraParams.from_array(base + walk[t]) for t in range(T)]

    ball = np.zeros((T, 2))
    ball_target = _smooth_walk(rng, T, cfg.fps, 60.0, periods=(7.0, 19.0)), _smooth_walk(rng, T, cfg.fps, 40.0, periods=(5.0, 13.0))
    ball[:, 0] = np.clip(ball_target[0], -hl, hl)
    ball[:, 1] = np.clip(ball_target[1], -hw, hw)

    visible = np.zeros((T, n), bool)
    for t in range(T):
        visible[t] = _in_view(cameras[t], pos[t], cfg.width, cfg.height)
    return GroundTruth(cfg.fps, cameras, idents, pos, orient, visible, ball, latents)


def _in_view(cam: CameraParams, xy: np.ndarray, width: int, height: int) -> np.ndarray:
    pts = np.column_stack([xy, np.zeros(len(xy))])
    depth = world_to_ndc(cam, pts, width / height)[:, 2]
    ok = depth > 1e-9
    pix = np.full((len(xy), 2), -1.0)
    pix[ok] = world_to_pixel(cam, pts[ok], width, height)
    return ok & (pix[:, 0] >= 0) & (pix[:, 0] < width) & (pix[:, 1] >= 0) & (pix[:, 1] < height)


@dataclass
class Observations:
    detections: Dict[int, List[Detection]]
    keypoints: Dict[int, List[DetectedKeypoint]]
    initial_cameras: List[CameraParams]
    truth_ids: Dict[int, List[int]]  # per frame, identity per detection (-1 for ball and anomalies)


def _reading(rng_u, rng_pick, number: Optional[int], confusion: float) -> Tuple[np.ndarray, np.ndarray]:
    """Correct with probability 1 - confusion; else half confidently wrong, half unreadable."""
    if number is None:
        return encode_jersey(None)
    if rng_u < confusion / 2.0:
        wrong = (number + 1 + rng_pick) % 100
        return encode_jersey(wrong, READING_CONF)
    if rng_u < confusion:
        return encode_jersey(None)
    return encode_jersey(number, READING_CONF)


def render_observations(gt: GroundTruth, cfg: SimConfig) -> Observations:
    model = standard_pitch()
    n = len(gt.identities)
    dets: Dict[int, List[Detection]] = {}
    kps: Dict[int, List[DetectedKeypoint]] = {}
    truth: Dict[int, List[int]] = {}
    initial: List[CameraParams] = []
    ball_reid = np.zeros(cfg.reid_dim)
    ball_reid[0] = 1.0
    ball_team = np.zeros(cfg.team_dim)
    ball_team[-1] = 1.0
    aspect = cfg.width / cfg.height
    noise_sd = np.array([cfg.camera_noise[k] for k in CAMERA_CHANNELS])
    for f in range(gt.n_frames):
        rng = np.random.default_rng([cfg.seed, 1, f])
        cam = gt.cameras[f]
        # fixed draw order, independent of the noise levels
        pix_noise = rng.normal(size=(n + 1, 3))
        reid_noise = rng.normal(size=(n, cfg.reid_dim))
        team_noise = rng.normal(size=(n, cfg.team_dim))
        drop_u = rng.uniform(size=n + 1)
        jersey_u = rng.uniform(size=n)
        jersey_pick = rng.integers(0, 98, size=n)
        anomaly_u = rng.uniform(size=n)
        anomaly_xy = rng.uniform(-1, 1, size=(n, 2))
        kp_noise = rng.normal(size=(len(model.keypoints), 2))
        cam_noise = rng.normal(size=7)

        initial.append(CameraParams.from_array(cam.as_array() + noise_sd * cam_noise))

        kp_pix = world_to_pixel(cam, model.keypoints, cfg.width, cfg.height) + cfg.pixel_sigma * kp_noise
        depth = world_to_ndc(cam, model.keypoints, aspect)[:, 2]
        inside = (depth > 0) & (kp_pix[:, 0] >= 0) & (kp_pix[:, 0] < cfg.width) & (kp_pix[:, 1] >= 0) & (kp_pix[:, 1] < cfg.height)
        kps[f] = [DetectedKeypoint(int(k), float(kp_pix[k, 0]), float(kp_pix[k, 1]), 1.0) for k in np.flatnonzero(inside)]

        frame_dets: List[Detection] = []
        frame_truth: List[int] = []
        feet = np.column_stack([gt.positions[f], np.zeros(n)])
        heads = feet.copy()
        heads[:, 2] = -PLAYER_HEIGHT
        visible = gt.visible[f]
        foot_pix = np.full((n, 2), np.nan)
        head_pix = np.full((n, 2), np.nan)
        if visible.any():
            foot_pix[visible] = world_to_pixel(cam, feet[visible], cfg.width, cfg.height)
            head_pix[visible] = world_to_pixel(cam, heads[visible], cfg.width, cfg.height)
        reid = _unit_rows(np.array([i.reid for i in gt.identities]) + cfg.embedding_sigma * reid_noise)
        team = _unit_rows(np.array([i.team for i in gt.identities]) + cfg.embedding_sigma * team_noise)
        for k, ident in enumerate(gt.identities):
            if not visible[k] or drop_u[k] < cfg.dropout:
                continue
            u, v = foot_pix[k] + cfg.pixel_sigma * pix_noise[k, :2]
            h = max(abs(foot_pix[k, 1] - head_pix[k, 1]) + cfg.pixel_sigma * pix_noise[k, 2], 2.0)
            w = BOX_ASPECT * h
            first, second = _reading(jersey_u[k], int(jersey_pick[k]), ident.jersey, cfg.jersey_confusion)
            frame_dets.append(Detection(
                frame=f, bbox=(u - w / 2, v - h, w, h), reid=reid[k], team=team[k], jersey_first=first, jersey_second=second,
                cls="athlete", conf=1.0, orient=ORIENTATIONS[gt.orientations[f, k]], anomaly=False,
            ))
            frame_truth.append(ident.id)
            if anomaly_u[k] < cfg.anomaly_rate:
                ax, ay = anomaly_xy[k] * [LENGTH / 2, WIDTH / 2]
                fp = world_to_pixel(cam, np.array([[ax, ay, 0.0]]), cfg.width, cfg.height)[0]
                first, second = encode_jersey(None)
                frame_dets.append(Detection(
                    frame=f, bbox=(fp[0] - w / 2, fp[1] - h, w, h), reid=reid[k], team=team[k], jersey_first=first,
                    jersey_second=second, cls="athlete", conf=0.5, orient=ORIENTATIONS[gt.orientations[f, k]], anomaly=True,
                ))
                frame_truth.append(-1)
        if cfg.include_ball and drop_u[n] >= cfg.dropout:
            bxy = np.array([[gt.ball[f, 0], gt.ball[f, 1], 0.0]])
            if _in_view(cam, bxy[:, :2], cfg.width, cfg.height)[0]:
                bp = world_to_pixel(cam, bxy, cfg.width, cfg.height)[0] + cfg.pixel_sigma * pix_noise[n, :2]
                first, second = encode_jersey(None)
                frame_dets.append(Detection(
                    frame=f, bbox=(bp[0] - 3.0, bp[1] - 6.0, 6.0, 6.0), reid=ball_reid, team=ball_team,
                    jersey_first=first, jersey_second=second, cls="ball", conf=1.0, orient="up",
                ))
                frame_truth.append(-1)
        dets[f] = frame_dets
        truth[f] = frame_truth
    return Observations(dets, kps, initial, truth)


def ground_truth_tracklets(gt: GroundTruth, obs: Observations) -> List[Tracklet]:
    """One tracklet per identity from its rendered detections, at true positions."""
    per_id: Dict[int, List[TrackRecord]] = {}
    for f in sorted(obs.detections):
        for det, ident in zip(obs.detections[f], obs.truth_ids[f]):
            if ident < 0:
                continue
            x, y = gt.positions[f, ident]
            per_id.setdefault(ident, []).append(TrackRecord(
                f, float(x), float(y), det.reid, det.team, det.jersey_first, det.jersey_second, det.orient,
            ))
    return [Tracklet(i + 1, recs) for i, recs in sorted(per_id.items())]


def fragment_tracklets(tracklets: Sequence[Tracklet], pieces: int, seed: int = 0) -> List[Tracklet]:
    """Cut each tracklet into ``pieces`` contiguous parts, dropping one record at each cut.

    Short tracklets yield as many pieces as their length allows.
    """
    if pieces < 1:
        raise ConfigError("pieces must be >= 1")
    rng = np.random.default_rng(seed)
    out: List[Tracklet] = []
    next_id = 1
    for t in tracklets:
        recs = t.records
        cuts_wanted = min(pieces - 1, max((len(recs) - 1) // 2, 0))
        cut_idx: List[int] = []
        if cuts_wanted > 0:
            # cut positions in 1..len-2, at least two apart so every piece keeps a record
            free = len(recs) - 2 - (cuts_wanted - 1)
            chosen = np.sort(rng.choice(free, size=cuts_wanted, replace=False))
            cut_idx = [int(c) + 1 + i for i, c in enumerate(chosen)]
        bounds = [-1] + cut_idx + [len(recs)]
        for a, b in zip(bounds, bounds[1:]):
            part = recs[a + 1:b]
            if part:
                out.append(Tracklet(next_id, list(part), t.label, t.role, t.side, t.jersey))
                next_id += 1
    return out
