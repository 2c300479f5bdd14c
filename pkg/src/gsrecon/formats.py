"""JSONL record formats and atomic file writes.

Floats are written with Python's shortest round-trip representation, so every
value reads back bit-identical. Readers validate each line and report the
file and line number of the first bad record.
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .calibration import DetectedKeypoint
from .errors import DomainError, SchemaError
from .evaluation import GsRecord
from .geometry import CameraParams
from .postprocess import TrackRecord, Tracklet
from .tracking import ORIENTATIONS, Detection

FIRST_KEYS = ("none",) + tuple(str(d) for d in range(1, 10))
SECOND_KEYS = tuple(str(d) for d in range(10))

DETECTIONS = "detections.jsonl"
KEYPOINTS = "keypoints.jsonl"
CAMERA_INIT = "camera_init.jsonl"
CAMERA = "camera.jsonl"
TRACKLETS = "tracklets.jsonl"
TEAMS = "teams.json"
GAMESTATE = "gamestate.jsonl"
GT_GAMESTATE = "gt_gamestate.jsonl"
GT_CAMERA = "gt_camera.jsonl"
FRAGMENTS = "fragments.jsonl"
SCORES = "scores.json"
SCORES_TXT = "scores.txt"


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False, separators=(",", ":"))


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path, rows: Iterable[dict]) -> None:
    atomic_write_text(path, "".join(_dumps(r) + "\n" for r in rows))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, ensure_ascii=False, allow_nan=False, indent=2) + "\n")


def read_json(path) -> Any:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e.msg}", path, e.lineno) from None


def read_jsonl(path, parse: Callable[[dict], Any]) -> List[Any]:
    """Parse every non-blank line with ``parse``; errors name the line."""
    path = Path(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid JSON: {e.msg}", path, lineno) from None
            if not isinstance(obj, dict):
                raise SchemaError("record must be a JSON object", path, lineno)
            try:
                out.append(parse(obj))
            except SchemaError as e:
                raise SchemaError(str(e), path, lineno) from None
            except (DomainError, ValueError, TypeError) as e:
                raise SchemaError(str(e), path, lineno) from None
    return out


# field checks ---------------------------------------------------------------

def _keys(obj: dict, required: Sequence[str], optional: Sequence[str] = ()) -> None:
    missing = [k for k in required if k not in obj]
    if missing:
        raise SchemaError(f"missing field(s) {missing}")
    extra = sorted(set(obj) - set(required) - set(optional))
    if extra:
        raise SchemaError(f"unknown field(s) {extra}")


def _int(v, name: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(f"{name} must be an integer")
    return v


def _num(v, name: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(f"{name} must be a finite number")
    return float(v)


def _vec(v, name: str) -> np.ndarray:
    if not isinstance(v, list) or not v:
        raise SchemaError(f"{name} must be a non-empty list of numbers")
    return np.array([_num(x, name) for x in v], float)


def _choice(v, name: str, options: Sequence[str]) -> str:
    if v not in options:
        raise SchemaError(f"{name} must be one of {list(options)}")
    return v


def _dist(v, name: str, keys: Sequence[str]) -> np.ndarray:
    if not isinstance(v, dict) or set(v) != set(keys):
        raise SchemaError(f"{name} must map exactly {list(keys)} to probabilities")
    return np.array([_num(v[k], name) for k in keys], float)


def _floats(v: np.ndarray) -> List[float]:
    return [float(x) for x in v]


# detections -----------------------------------------------------------------

def detection_to_row(d: Detection) -> dict:
    return {
        "frame": int(d.frame),
        "bbox": [float(v) for v in d.bbox],
        "class": d.cls,
        "conf": float(d.conf),
        "reid": _floats(d.reid),
        "team": _floats(d.team),
        "jersey_first": dict(zip(FIRST_KEYS, _floats(d.jersey_first))),
        "jersey_second": dict(zip(SECOND_KEYS, _floats(d.jersey_second))),
        "orient": d.orient,
        "anomaly": bool(d.anomaly),
    }


def row_to_detection(obj: dict) -> Detection:
    _keys(obj, ("frame", "bbox", "class", "conf", "reid", "team", "jersey_first", "jersey_second", "orient", "anomaly"))
    bbox = _vec(obj["bbox"], "bbox")
    if len(bbox) != 4:
        raise SchemaError("bbox must have 4 numbers")
    if not isinstance(obj["anomaly"], bool):
        raise SchemaError("anomaly must be a boolean")
    return Detection(
        frame=_int(obj["frame"], "frame"), bbox=tuple(bbox), reid=_vec(obj["reid"], "reid"), team=_vec(obj["team"], "team"),
        jersey_first=_dist(obj["jersey_first"], "jersey_first", FIRST_KEYS),
        jersey_second=_dist(obj["jersey_second"], "jersey_second", SECOND_KEYS),
        cls=_choice(obj["class"], "class", ("athlete", "ball")), conf=_num(obj["conf"], "conf"),
        orient=_choice(obj["orient"], "orient", ORIENTATIONS), anomaly=obj["anomaly"],
    )


def write_detections(path, dets_by_frame: Dict[int, Sequence[Detection]]) -> None:
    write_jsonl(path, (detection_to_row(d) for f in sorted(dets_by_frame) for d in dets_by_frame[f]))


def read_detections(path) -> Dict[int, List[Detection]]:
    out: Dict[int, List[Detection]] = {}
    for d in read_jsonl(path, row_to_detection):
        out.setdefault(d.frame, []).append(d)
    return out


# keypoints ------------------------------------------------------------------

def keypoints_to_row(frame: int, kps: Sequence[DetectedKeypoint]) -> dict:
    return {"frame": int(frame), "points": [{"idx": k.index, "x": float(k.x), "y": float(k.y), "conf": float(k.conf)} for k in kps]}


def row_to_keypoints(obj: dict) -> Tuple[int, List[DetectedKeypoint]]:
    _keys(obj, ("frame", "points"))
    if not isinstance(obj["points"], list):
        raise SchemaError("points must be a list")
    pts = []
    for p in obj["points"]:
        if not isinstance(p, dict):
            raise SchemaError("each point must be an object")
        _keys(p, ("idx", "x", "y", "conf"))
        pts.append(DetectedKeypoint(_int(p["idx"], "idx"), _num(p["x"], "x"), _num(p["y"], "y"), _num(p["conf"], "conf")))
    return _int(obj["frame"], "frame"), pts


def write_keypoints(path, kps_by_frame: Dict[int, Sequence[DetectedKeypoint]]) -> None:
    write_jsonl(path, (keypoints_to_row(f, kps_by_frame[f]) for f in sorted(kps_by_frame)))


def read_keypoints(path) -> Dict[int, List[DetectedKeypoint]]:
    out: Dict[int, List[DetectedKeypoint]] = {}
    for frame, pts in read_jsonl(path, row_to_keypoints):
        if frame in out:
            raise SchemaError(f"duplicate keypoints record for frame {frame}", path)
        out[frame] = pts
    return out


# cameras --------------------------------------------------------------------

def camera_to_row(frame: int, p: CameraParams, refined: bool) -> dict:
    row = {"frame": int(frame)}
    row.update({k: float(getattr(p, k)) for k in CameraParams.NAMES})
    row["refined"] = bool(refined)
    return row


def row_to_camera(obj: dict) -> Tuple[int, CameraParams, bool]:
    _keys(obj, ("frame",) + CameraParams.NAMES + ("refined",))
    if not isinstance(obj["refined"], bool):
        raise SchemaError("refined must be a boolean")
    params = CameraParams(**{k: _num(obj[k], k) for k in CameraParams.NAMES})
    return _int(obj["frame"], "frame"), params, obj["refined"]


def write_cameras(path, cams: Sequence[CameraParams], refined: bool, frames: Optional[Sequence[int]] = None) -> None:
    frames = list(range(len(cams))) if frames is None else list(frames)
    write_jsonl(path, (camera_to_row(f, c, refined) for f, c in zip(frames, cams)))


def read_cameras(path) -> Dict[int, CameraParams]:
    out: Dict[int, CameraParams] = {}
    for frame, p, _ in read_jsonl(path, row_to_camera):
        if frame in out:
            raise SchemaError(f"duplicate camera record for frame {frame}", path)
        out[frame] = p
    return out


# tracklets ------------------------------------------------------------------

def tracklet_rows(tracklets: Sequence[Tracklet], ball: Sequence[Tuple[int, float, float]] = ()) -> Iterator[dict]:
    """One row per (tracklet, frame); the ball track uses tracklet id 0 and class "ball"."""
    for t in tracklets:
        for r in t.records:
            row = {"tracklet": int(t.id), "class": "athlete", "frame": int(r.frame), "x": float(r.x), "y": float(r.y)}
            if r.reid is not None:
                row["reid"] = _floats(r.reid)
            if r.team is not None:
                row["team"] = _floats(r.team)
            if r.jersey_first is not None and r.jersey_second is not None:
                row["jersey_first"] = dict(zip(FIRST_KEYS, _floats(r.jersey_first)))
                row["jersey_second"] = dict(zip(SECOND_KEYS, _floats(r.jersey_second)))
            if r.orient is not None:
                row["orient"] = r.orient
            yield row
    for frame, x, y in ball:
        yield {"tracklet": 0, "class": "ball", "frame": int(frame), "x": float(x), "y": float(y)}


def _row_to_track_record(obj: dict):
    _keys(obj, ("tracklet", "class", "frame", "x", "y"), ("reid", "team", "jersey_first", "jersey_second", "orient"))
    cls = _choice(obj["class"], "class", ("athlete", "ball"))
    if ("jersey_first" in obj) != ("jersey_second" in obj):
        raise SchemaError("jersey_first and jersey_second must appear together")
    rec = TrackRecord(
        frame=_int(obj["frame"], "frame"), x=_num(obj["x"], "x"), y=_num(obj["y"], "y"),
        reid=_vec(obj["reid"], "reid") if "reid" in obj else None,
        team=_vec(obj["team"], "team") if "team" in obj else None,
        jersey_first=_dist(obj["jersey_first"], "jersey_first", FIRST_KEYS) if "jersey_first" in obj else None,
        jersey_second=_dist(obj["jersey_second"], "jersey_second", SECOND_KEYS) if "jersey_second" in obj else None,
        orient=_choice(obj["orient"], "orient", ORIENTATIONS) if "orient" in obj else None,
    )
    return _int(obj["tracklet"], "tracklet"), cls, rec


def write_tracklets(path, tracklets: Sequence[Tracklet], ball: Sequence[Tuple[int, float, float]] = ()) -> None:
    write_jsonl(path, tracklet_rows(tracklets, ball))


def read_tracklets(path) -> Tuple[List[Tracklet], List[Tuple[int, float, float]]]:
    per: Dict[int, List[TrackRecord]] = {}
    ball: List[Tuple[int, float, float]] = []
    for tid, cls, rec in read_jsonl(path, _row_to_track_record):
        if cls == "ball":
            ball.append((rec.frame, rec.x, rec.y))
        else:
            per.setdefault(tid, []).append(rec)
    try:
        tracklets = [Tracklet(tid, sorted(recs, key=lambda r: r.frame)) for tid, recs in sorted(per.items())]
    except DomainError as e:
        raise SchemaError(str(e), path) from None
    return tracklets, sorted(ball)


# game state -----------------------------------------------------------------

def gs_to_row(r: GsRecord) -> dict:
    return {"frame": int(r.frame), "id": int(r.id), "x": float(r.x), "y": float(r.y), "role": r.role, "side": r.side,
            "jersey": None if r.jersey is None else int(r.jersey)}


def row_to_gs(obj: dict) -> GsRecord:
    _keys(obj, ("frame", "id", "x", "y", "role", "side", "jersey"))
    jersey = obj["jersey"]
    if jersey is not None:
        jersey = _int(jersey, "jersey")
    return GsRecord(_int(obj["frame"], "frame"), _int(obj["id"], "id"), _num(obj["x"], "x"), _num(obj["y"], "y"),
                    obj["role"], obj["side"], jersey)


def write_gamestate(path, records: Sequence[GsRecord]) -> None:
    write_jsonl(path, (gs_to_row(r) for r in sorted(records, key=lambda r: (r.frame, r.id))))


def read_gamestate(path) -> List[GsRecord]:
    return read_jsonl(path, row_to_gs)
