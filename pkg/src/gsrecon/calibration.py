"""Keypoint-based camera refinement and temporal smoothing.

Detected pitch keypoints are projected onto the ground plane under candidate
camera parameters, grouped into the straight lines they are expected to lie
on, cleaned of outliers, and scored by their distance to the ideal model
lines. Candidates come from adding fixed per-parameter offsets to the current
estimate (cyclic coordinate search), optionally followed by a derivative-free
simplex polish. A Savitzky-Golay pass over the whole sequence then removes
frame-to-frame jitter, with every correction clamped.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import savgol_filter

from . import _kernels
from .errors import ConfigError
from .geometry import DEFAULT_HEIGHT, DEFAULT_WIDTH, CameraParams, pixels_to_ground, rotations_from_angles
from .pitch import PitchModel, segment_distance, standard_pitch

log = logging.getLogger(__name__)

# metres charged for each keypoint whose ray misses the ground
PROJECTION_PENALTY = 1000.0

ANGLE_DELTAS = (-0.15, -0.10, -0.05, 0.0, 0.05, 0.10, 0.15)
POSITION_DELTAS = (-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)
SEARCH_ORDER = ("pan", "tilt", "roll", "fov", "x", "y", "z")


class CalibrationWarning(UserWarning):
    """Raised (as a warning) when a frame carries no usable keypoints."""


@dataclass(frozen=True)
class DetectedKeypoint:
    index: int
    x: float
    y: float
    conf: float = 1.0

    def __post_init__(self):
        if not 0 <= self.index < 74:
            raise ValueError(f"keypoint index out of range: {self.index}")
        if not 0.0 <= self.conf <= 1.0:
            raise ValueError(f"keypoint confidence out of range: {self.conf}")


def _default_deltas() -> Dict[str, Tuple[float, ...]]:
    return {n: (POSITION_DELTAS if n in CameraParams.POSITIONS else ANGLE_DELTAS) for n in SEARCH_ORDER}


@dataclass
class RefinementConfig:
    """Search settings.

    ``deltas`` holds the offsets tried for each parameter. ``scales`` lists
    successive multipliers applied to every delta set (coarse to fine); the
    search runs up to ``max_sweeps`` sweeps at each scale. ``min_confidence``
    drops low-confidence detections before anything else.

    With ``polish`` on, a Nelder-Mead search on squared line distances starts
    from the coordinate-search result. Camera position trades off against the
    angles along a narrow valley that axis-aligned steps cannot follow; the
    simplex can. ``polish_steps`` is the initial simplex edge for positions
    (m) and for angles/fov (rad).
    """

    deltas: Dict[str, Tuple[float, ...]] = field(default_factory=_default_deltas)
    max_sweeps: int = 3
    outlier_threshold: float = 0.5
    scales: Tuple[float, ...] = (1.0,)
    min_confidence: float = 0.0
    polish: bool = True
    polish_max_evals: int = 3000
    polish_steps: Tuple[float, float] = (0.5, 0.05)

    def __post_init__(self):
        self.deltas = {k: tuple(float(d) for d in v) for k, v in self.deltas.items()}
        missing = set(SEARCH_ORDER) - set(self.deltas)
        if missing:
            raise ConfigError(f"delta sets missing for {sorted(missing)}")
        for name, ds in self.deltas.items():
            if 0.0 not in ds:
                raise ConfigError(f"delta set for {name} must contain 0")
        if self.outlier_threshold <= 0:
            raise ConfigError("outlier threshold must be positive")
        if self.max_sweeps < 1:
            raise ConfigError("max_sweeps must be >= 1")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ConfigError("scales must be a non-empty list of positive numbers")
        self.scales = tuple(float(s) for s in self.scales)
        if self.polish_max_evals < 8:
            raise ConfigError("polish_max_evals must be >= 8")
        self.polish_steps = tuple(float(v) for v in self.polish_steps)
        if len(self.polish_steps) != 2 or min(self.polish_steps) <= 0:
            raise ConfigError("polish_steps must be two positive numbers")


@dataclass(frozen=True)
class LineObservation:
    """A straight model line fitted through its projected member keypoints."""

    line_index: int
    line_id: str
    point: Tuple[float, float]
    direction: Tuple[float, float]
    inliers: Tuple[int, ...]
    outliers: Tuple[int, ...]


def _unique_keypoints(kps: Sequence[DetectedKeypoint], min_conf: float = 0.0) -> List[DetectedKeypoint]:
    best: Dict[int, DetectedKeypoint] = {}
    for kp in kps:
        if kp.conf < min_conf:
            continue
        cur = best.get(kp.index)
        if cur is None or (kp.conf, -kp.x, -kp.y) > (cur.conf, -cur.x, -cur.y):
            best[kp.index] = kp
    return [best[k] for k in sorted(best)]


def fit_line_tls(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Total-least-squares line: returns (centroid, unit direction)."""
    c = points.mean(0)
    _, _, vt = np.linalg.svd(points - c)
    d = vt[0]
    if d[0] < 0 or (d[0] == 0 and d[1] < 0):
        d = -d
    return c, d


def _residuals(points, c, d):
    rel = points - c
    return np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0])


def _robust_fit(points: np.ndarray, thr: float, ideal_dir: np.ndarray) -> np.ndarray:
    """Boolean inlier mask from a pair-hypothesis consensus search.

    Each pair of points proposes a line; the one with the smallest truncated
    residual sum wins, ties going to the line closest in direction to the
    ideal model line, then to the earlier pair.
    """
    n = len(points)
    if n <= 2:
        return np.ones(n, bool)
    i, j = np.triu_indices(n, 1)
    d = points[j] - points[i]
    norm = np.hypot(d[:, 0], d[:, 1])
    keep = norm >= 1e-12
    if not keep.any():
        return np.ones(n, bool)
    i, d = i[keep], d[keep] / norm[keep, None]
    rel = points[None, :, :] - points[i][:, None, :]
    res = np.abs(rel[..., 0] * d[:, 1, None] - rel[..., 1] * d[:, 0, None])
    cost = np.round(np.minimum(res, thr).sum(1), 9)
    misalign = 1.0 - np.abs(d @ ideal_dir)
    best = np.lexsort((np.arange(len(cost)), misalign, cost))[0]
    return res[best] <= thr


def keypoints_to_lines(
    kps: Sequence[DetectedKeypoint],
    params: CameraParams,
    model: Optional[PitchModel] = None,
    threshold: float = 0.5,
    width: float = DEFAULT_WIDTH,
    height: float = DEFAULT_HEIGHT,
) -> List[LineObservation]:
    """Group projected keypoints by model line and fit each line with outlier rejection.

    Lines with fewer than two projected member keypoints are skipped. After a
    consensus fit, members farther than ``threshold`` metres from the
    total-least-squares fit are dropped and the line is refit once.
    """
    model = model or standard_pitch()
    kps = _unique_keypoints(kps)
    if not kps:
        return []
    pix = np.array([[k.x, k.y] for k in kps])
    ground, valid = pixels_to_ground(params, pix, width, height)
    row_of = {k.index: r for r, k in enumerate(kps) if valid[r]}

    out: List[LineObservation] = []
    for li, ln in enumerate(model.lines):
        if ln.is_arc:
            continue
        members = [m for m in ln.members if m in row_of]
        if len(members) < 2:
            continue
        pts = ground[[row_of[m] for m in members]]
        ideal = np.asarray(ln.b, float) - np.asarray(ln.a, float)
        ideal = ideal / np.linalg.norm(ideal)
        mask = _robust_fit(pts, threshold, ideal)
        c, d = fit_line_tls(pts[mask])
        keep = _residuals(pts, c, d) <= threshold
        if keep.sum() >= 2:
            c, d = fit_line_tls(pts[keep])
        else:
            keep = mask
        inl = tuple(m for m, k in zip(members, keep) if k)
        outl = tuple(m for m, k in zip(members, keep) if not k)
        out.append(LineObservation(li, ln.id, (float(c[0]), float(c[1])), (float(d[0]), float(d[1])), inl, outl))
    return out


def inlier_keypoints(kps, params, model=None, threshold=0.5, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT) -> List[DetectedKeypoint]:
    """Keypoints that were not rejected by any line fit."""
    model = model or standard_pitch()
    kps = _unique_keypoints(kps)
    rejected = set()
    for obs in keypoints_to_lines(kps, params, model, threshold, width, height):
        rejected.update(obs.outliers)
    return [k for k in kps if k.index not in rejected]


class KeypointObjective:
    """Vectorised objective over a fixed set of inlier keypoints.

    Each keypoint contributes its distance to every model line it belongs to,
    so a keypoint sitting on two crossing lines is pinned in both directions.
    """

    def __init__(self, kps: Sequence[DetectedKeypoint], model: PitchModel, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT):
        kps = list(kps)
        self.n = len(kps)
        self.aspect = width / height
        pix = np.array([[k.x, k.y] for k in kps]).reshape(-1, 2)
        self.base = np.column_stack([2.0 * pix[:, 0] / width - 1.0, 2.0 * pix[:, 1] / height - 1.0, np.ones(self.n)])
        membership = model.keypoint_lines()
        rows, a, b = [], [], []
        for r, kp in enumerate(kps):
            for li in membership[kp.index]:
                ln = model.lines[li]
                if ln.is_arc:
                    continue
                rows.append(r)
                a.append(ln.a)
                b.append(ln.b)
        self.rows = np.array(rows, int)
        self.a = np.array(a, float).reshape(-1, 2)
        self.b = np.array(b, float).reshape(-1, 2)

    def ground(self, values: np.ndarray):
        """Ground projections for a batch of parameter vectors ``(K, 7)``."""
        values = np.atleast_2d(values)
        x, y, z, pan, tilt, roll, fov = values.T
        rot = rotations_from_angles(pan, tilt, roll)
        f = 1.0 / np.tan(fov / 2.0)
        scale = np.stack([self.aspect / f, 1.0 / f, np.ones_like(f)], -1)
        rays = np.einsum("kji,knj->kni", rot, self.base[None] * scale[:, None, :])
        dz = rays[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -z[:, None] / dz
        valid = (np.abs(dz) > 1e-12) & (s > 0) & np.isfinite(s)
        s = np.where(valid, s, 0.0)
        gx = x[:, None] + s * rays[..., 0]
        gy = y[:, None] + s * rays[..., 1]
        return np.stack([gx, gy], -1), valid

    def __call__(self, values: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(np.asarray(values, float))
        if self.n == 0:
            return np.zeros(len(values))
        g, valid = self.ground(values)
        dist = segment_distance(g[:, self.rows], self.a, self.b)
        dist = np.where(valid[:, self.rows], dist, 0.0)
        return dist.sum(1) + PROJECTION_PENALTY * (~valid).sum(1)


def refinement_objective(
    params: CameraParams,
    kps: Sequence[DetectedKeypoint],
    model: Optional[PitchModel] = None,
    threshold: float = 0.5,
    width: float = DEFAULT_WIDTH,
    height: float = DEFAULT_HEIGHT,
) -> float:
    """Sum over inlier keypoints of the ground-plane distance to their model lines (metres)."""
    model = model or standard_pitch()
    kps = _unique_keypoints(kps)
    if not kps:
        warnings.warn("refinement objective evaluated without keypoints", CalibrationWarning, stacklevel=2)
        return 0.0
    inl = inlier_keypoints(kps, params, model, threshold, width, height)
    # keypoints whose rays miss the ground are never rejected by a line fit; they pay the penalty here
    return float(KeypointObjective(inl, model, width, height)(params.as_array())[0])


def _search(objective: KeypointObjective, start: np.ndarray, config: RefinementConfig) -> np.ndarray:
    current = start.copy()
    value = float(objective(current)[0])
    for scale in config.scales:
        for _ in range(config.max_sweeps):
            improved = False
            for name in SEARCH_ORDER:
                j = CameraParams.NAMES.index(name)
                deltas = np.array(config.deltas[name]) * scale
                cand = np.repeat(current[None], len(deltas), 0)
                cand[:, j] += deltas
                if name == "fov":
                    ok = (cand[:, j] > 1e-3) & (cand[:, j] < math.pi - 1e-3)
                else:
                    ok = np.ones(len(deltas), bool)
                vals = np.where(ok, objective(cand), np.inf)
                # lowest value, then smallest |delta|, then list position
                order = sorted(range(len(deltas)), key=lambda i: (vals[i], abs(deltas[i]), i))
                best = order[0]
                if vals[best] < value and deltas[best] != 0.0:
                    current = cand[best]
                    value = float(vals[best])
                    improved = True
            if not improved:
                break
    return current


def _polish(objective: KeypointObjective, start: np.ndarray, config: RefinementConfig) -> np.ndarray:
    if objective.n == 0:
        return start
    step_pos, step_ang = config.polish_steps
    steps = np.array([step_pos if n in CameraParams.POSITIONS else step_ang for n in CameraParams.NAMES])
    best, _ = _kernels.simplex_search(
        np.asarray(start, float), np.ones(7), steps, config.polish_max_evals, 1e-7, 1e-10,
        objective.base, objective.rows, objective.a, objective.b, objective.aspect, 2.0, PROJECTION_PENALTY,
    )
    return best


def refine_params(
    initial: CameraParams,
    kps: Sequence[DetectedKeypoint],
    model: Optional[PitchModel] = None,
    config: Optional[RefinementConfig] = None,
    width: float = DEFAULT_WIDTH,
    height: float = DEFAULT_HEIGHT,
) -> CameraParams:
    """Search parameter offsets that best align the keypoints with the pitch model.

    Never returns parameters with a larger objective than ``initial``.
    """
    model = model or standard_pitch()
    config = config or RefinementConfig()
    kps = _unique_keypoints(kps, config.min_confidence)
    if not kps:
        warnings.warn("no keypoints in frame; keeping initial camera", CalibrationWarning, stacklevel=2)
        return initial
    inl = inlier_keypoints(kps, initial, model, config.outlier_threshold, width, height)
    objective = KeypointObjective(inl, model, width, height)
    best = _search(objective, initial.as_array(), config)
    if config.polish:
        best = _polish(objective, best, config)
    try:
        refined = CameraParams.from_array(best)
    except ValueError:
        return initial
    before = refinement_objective(initial, kps, model, config.outlier_threshold, width, height)
    after = refinement_objective(refined, kps, model, config.outlier_threshold, width, height)
    return refined if after <= before else initial


def _refine_job(args):
    initial, kps, model, config, width, height = args
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CalibrationWarning)
        return refine_params(initial, kps, model, config, width, height)


def refine_sequence(
    initials: Sequence[CameraParams],
    keypoints: Sequence[Sequence[DetectedKeypoint]],
    model: Optional[PitchModel] = None,
    config: Optional[RefinementConfig] = None,
    width: float = DEFAULT_WIDTH,
    height: float = DEFAULT_HEIGHT,
    workers: int = 1,
) -> List[CameraParams]:
    """Refine every frame independently; ``workers > 1`` uses a process pool."""
    model = model or standard_pitch()
    config = config or RefinementConfig()
    jobs = [(p, k, model, config, width, height) for p, k in zip(initials, keypoints)]
    if workers <= 1 or len(jobs) < 2:
        return [_refine_job(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_refine_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


@dataclass
class SmootherConfig:
    window: int = 31
    order: int = 2
    angle_clamp: float = math.radians(2.0)
    position_clamp: float = 2.0
    delay: int = 15

    def __post_init__(self):
        if self.window % 2 == 0 or self.window <= self.order:
            raise ConfigError(f"window must be odd and larger than the order (window={self.window}, order={self.order})")
        if self.angle_clamp <= 0 or self.position_clamp <= 0:
            raise ConfigError("clamps must be positive")
        if self.delay != self.window // 2:
            raise ConfigError(f"delay {self.delay} must equal half the window ({self.window // 2})")


def smooth_sequence(seq: Sequence[CameraParams], config: Optional[SmootherConfig] = None) -> List[CameraParams]:
    """Savitzky-Golay smoothing of each parameter channel with clamped corrections.

    Output frame k depends on frames k - delay .. k + delay. Sequences shorter
    than the window come back unchanged.
    """
    config = config or SmootherConfig()
    seq = list(seq)
    if len(seq) < config.window:
        return seq
    raw = np.array([p.as_array() for p in seq])
    smooth = savgol_filter(raw, config.window, config.order, axis=0, mode="interp")
    clamp = np.array([config.position_clamp if n in CameraParams.POSITIONS else config.angle_clamp for n in CameraParams.NAMES])
    out = raw + np.clip(smooth - raw, -clamp, clamp)
    return [CameraParams.from_array(row) for row in out]
