"""In-memory pipeline stages: calibration, raw tracking, team detection, post-processing."""
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence, Tuple

from .calibration import DetectedKeypoint, refine_sequence, smooth_sequence
from .config import PipelineConfig
from .evaluation import GsRecord
from .geometry import CameraParams
from .postprocess import Tracklet, run_postprocess
from .errors import InsufficientDataError
from .teams import ClusterSet, assign_tracklet, build_clusters, samples_from_tracklets
from .tracking import Detection, filter_anomalies, locate_on_pitch, run_tracker, track_ball

log = logging.getLogger(__name__)

Ball = List[Tuple[int, float, float]]


def calibrate(
    initial: Dict[int, CameraParams], keypoints: Dict[int, Sequence[DetectedKeypoint]], cfg: PipelineConfig,
) -> Dict[int, CameraParams]:
    """Refine every frame's camera, then smooth the sequence in frame order."""
    frames = sorted(initial)
    refined = refine_sequence(
        [initial[f] for f in frames], [keypoints.get(f, []) for f in frames], cfg.pitch_model(), cfg.refinement,
        cfg.width, cfg.height, cfg.workers,
    )
    return dict(zip(frames, smooth_sequence(refined, cfg.smoother)))


def locate(dets: Dict[int, Sequence[Detection]], cameras: Dict[int, CameraParams], cfg: PipelineConfig) -> Dict[int, List[Detection]]:
    out: Dict[int, List[Detection]] = {}
    for f in sorted(dets):
        if f not in cameras:
            log.warning("frame %d has detections but no camera; dropping them", f)
            continue
        out[f] = locate_on_pitch(filter_anomalies(dets[f]), cameras[f], cfg.width, cfg.height)
    return out


def track(dets: Dict[int, Sequence[Detection]], cameras: Dict[int, CameraParams], cfg: PipelineConfig) -> Tuple[List[Tracklet], Ball]:
    located = locate(dets, cameras, cfg)
    keys = set(located) | set(cameras)
    frames = range(min(keys), max(keys) + 1) if keys else []
    return run_tracker(located, cfg.tracker, frames), track_ball(located, cfg.tracker)


def detect_teams(tracklets: Sequence[Tracklet], cameras: Dict[int, CameraParams], cfg: PipelineConfig) -> Optional[ClusterSet]:
    """Cluster set for the clip, or None when there are too few athletes to cluster."""
    samples = samples_from_tracklets(tracklets)
    frames = [r.frame for t in tracklets for r in t.records]
    duration = (max(frames) - min(frames) + 1) / cfg.fps if frames else 0.0
    pans = [cameras[f].pan for f in sorted(cameras)]
    try:
        return build_clusters(samples, cfg.teams, duration, pans)
    except InsufficientDataError as e:
        log.warning("team detection skipped: %s", e)
        return None


def assignments(tracklets: Sequence[Tracklet], clusters: Optional[ClusterSet]) -> List[dict]:
    """Per raw tracklet (role, side) from its mean team embedding."""
    out = []
    for t in tracklets:
        m = t.team_matrix()
        if clusters is None or not m.size:
            continue
        role, side = assign_tracklet(m, clusters)
        out.append({"tracklet": t.id, "role": role, "side": side})
    return out


def to_gamestate(tracklets: Sequence[Tracklet]) -> List[GsRecord]:
    out = []
    for t in tracklets:
        role = t.role or "other"
        side = t.side or "none"
        for r in t.records:
            out.append(GsRecord(r.frame, t.id, r.x, r.y, role, side, t.jersey))
    return sorted(out, key=lambda r: (r.frame, r.id))


def postprocess(tracklets: Sequence[Tracklet], clusters: Optional[ClusterSet], cfg: PipelineConfig) -> List[GsRecord]:
    return to_gamestate(run_postprocess(tracklets, clusters, cfg.merge))
