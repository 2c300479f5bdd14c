"""Canonical football pitch: markings, grass stripes and the 74-keypoint layout.

Grass is modelled as mowing stripes 3.75 m wide running parallel to the
halfway line (28 stripes over 105 m), so there are 27 stripe boundaries at
x = -48.75, -45.0, ..., 48.75; the boundary at x = 0 coincides with the
halfway line. A keypoint is an intersection of a stripe boundary with a
straight marking that crosses it (touchlines, and the long sides of the
penalty and goal areas). That gives exactly 74 points, ordered by x and then
by y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .errors import DomainError

LENGTH = 105.0
WIDTH = 68.0
PENALTY_AREA_WIDTH = 40.32
PENALTY_AREA_DEPTH = 16.5
GOAL_AREA_WIDTH = 18.32
GOAL_AREA_DEPTH = 5.5
CENTER_CIRCLE_RADIUS = 9.15
PENALTY_SPOT_DISTANCE = 11.0
STRIPE_WIDTH = 3.75

_TOL = 1e-9


@dataclass(frozen=True)
class PitchLine:
    """A straight segment (``kind`` marking or grass) or a circular arc.

    Arcs are stored as centre, radius and an angular range in radians
    (``start`` to ``end`` counter-clockwise, full circle when the span is 2*pi).
    """

    id: str
    kind: str
    a: Tuple[float, float] = (0.0, 0.0)
    b: Tuple[float, float] = (0.0, 0.0)
    center: Optional[Tuple[float, float]] = None
    radius: float = 0.0
    start: float = 0.0
    end: float = 2 * math.pi
    members: Tuple[int, ...] = ()

    @property
    def is_arc(self) -> bool:
        return self.center is not None

    def distance(self, points) -> np.ndarray:
        points = np.asarray(points, float)
        if self.is_arc:
            return _arc_distance(points, self)
        return segment_distance(points, np.asarray(self.a), np.asarray(self.b))


def segment_distance(points, a, b) -> np.ndarray:
    """Euclidean distance from ``points (..., 2)`` to segment ``a-b``; broadcasts over a/b."""
    points, a, b = np.asarray(points, float), np.asarray(a, float), np.asarray(b, float)
    ab = b - a
    denom = np.maximum((ab * ab).sum(-1), 1e-300)
    s = np.clip(((points - a) * ab).sum(-1) / denom, 0.0, 1.0)
    foot = a + s[..., None] * ab
    return np.sqrt(((points - foot) ** 2).sum(-1))


def _arc_distance(points, line: PitchLine) -> np.ndarray:
    c = np.asarray(line.center)
    rel = points - c
    r = np.sqrt((rel ** 2).sum(-1))
    span = line.end - line.start
    if span >= 2 * math.pi - 1e-12:
        return np.abs(r - line.radius)
    ang = np.mod(np.arctan2(rel[..., 1], rel[..., 0]) - line.start, 2 * math.pi)
    on_arc = ang <= span
    ends = [c + line.radius * np.array([math.cos(t), math.sin(t)]) for t in (line.start, line.end)]
    d_end = np.minimum(np.sqrt(((points - ends[0]) ** 2).sum(-1)), np.sqrt(((points - ends[1]) ** 2).sum(-1)))
    return np.where(on_arc, np.abs(r - line.radius), d_end)


@dataclass(frozen=True)
class PitchModel:
    length: float
    width: float
    lines: Tuple[PitchLine, ...]
    keypoints: np.ndarray = field(repr=False)
    penalty_areas: Dict[str, Tuple[float, float, float, float]] = field(default_factory=dict)

    def line(self, line_id: str) -> PitchLine:
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise KeyError(line_id)

    def keypoint_lines(self) -> List[List[int]]:
        """For each keypoint, the indices (into ``lines``) of the lines it belongs to."""
        out: List[List[int]] = [[] for _ in range(len(self.keypoints))]
        for li, ln in enumerate(self.lines):
            for k in ln.members:
                out[k].append(li)
        return out

    def to_dict(self) -> dict:
        lines = []
        for ln in self.lines:
            d = {"id": ln.id, "kind": ln.kind, "members": list(ln.members)}
            if ln.is_arc:
                d.update(center=list(ln.center), radius=ln.radius, start=ln.start, end=ln.end)
            else:
                d.update(a=list(ln.a), b=list(ln.b))
            lines.append(d)
        return {
            "length": self.length,
            "width": self.width,
            "penalty_areas": {k: list(v) for k, v in self.penalty_areas.items()},
            "keypoints": self.keypoints[:, :2].tolist(),
            "lines": lines,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PitchModel":
        lines = []
        for ln in d["lines"]:
            kw = dict(id=ln["id"], kind=ln["kind"], members=tuple(int(m) for m in ln.get("members", ())))
            if "center" in ln:
                kw.update(center=tuple(ln["center"]), radius=float(ln["radius"]), start=float(ln["start"]), end=float(ln["end"]))
            else:
                kw.update(a=tuple(ln["a"]), b=tuple(ln["b"]))
            lines.append(PitchLine(**kw))
        kps = np.asarray(d["keypoints"], float)
        kps = np.column_stack([kps, np.zeros(len(kps))])
        areas = {k: tuple(float(x) for x in v) for k, v in d.get("penalty_areas", {}).items()}
        return cls(float(d["length"]), float(d["width"]), tuple(lines), kps, areas)

    def save(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))

    @classmethod
    def load(cls, path) -> "PitchModel":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


def _stripe_xs(length: float = LENGTH, stripe: float = STRIPE_WIDTH) -> List[float]:
    n = int(round(length / stripe))
    return [-length / 2 + k * stripe for k in range(1, n)]


def standard_pitch() -> PitchModel:
    """105 x 68 m FIFA pitch with the 74-keypoint grass-stripe layout."""
    hl, hw = LENGTH / 2, WIDTH / 2
    pa_x = hl - PENALTY_AREA_DEPTH
    ga_x = hl - GOAL_AREA_DEPTH
    pa_y, ga_y = PENALTY_AREA_WIDTH / 2, GOAL_AREA_WIDTH / 2

    segments = [
        ("touchline_far", (-hl, -hw), (hl, -hw)),
        ("touchline_near", (-hl, hw), (hl, hw)),
        ("goal_line_left", (-hl, -hw), (-hl, hw)),
        ("goal_line_right", (hl, -hw), (hl, hw)),
    ]
    for side, sx in (("left", -1.0), ("right", 1.0)):
        segments += [
            (f"penalty_{side}_far", (sx * hl, -pa_y), (sx * pa_x, -pa_y)),
            (f"penalty_{side}_near", (sx * hl, pa_y), (sx * pa_x, pa_y)),
            (f"penalty_{side}_front", (sx * pa_x, -pa_y), (sx * pa_x, pa_y)),
            (f"goal_area_{side}_far", (sx * hl, -ga_y), (sx * ga_x, -ga_y)),
            (f"goal_area_{side}_near", (sx * hl, ga_y), (sx * ga_x, ga_y)),
            (f"goal_area_{side}_front", (sx * ga_x, -ga_y), (sx * ga_x, ga_y)),
        ]

    # horizontal markings crossed by stripe boundaries: (id, y, |x| range)
    crossing = [("touchline_far", -hw, -1.0, hl), ("touchline_near", hw, -1.0, hl)]
    for side, sx in (("left", -1.0), ("right", 1.0)):
        crossing += [
            (f"penalty_{side}_far", -pa_y, pa_x, hl),
            (f"penalty_{side}_near", pa_y, pa_x, hl),
            (f"goal_area_{side}_far", -ga_y, ga_x, hl),
            (f"goal_area_{side}_near", ga_y, ga_x, hl),
        ]

    points: List[Tuple[float, float]] = []
    for x in _stripe_xs():
        for cid, y, lo, hi in crossing:
            side_ok = ("left" in cid and x < 0) or ("right" in cid and x > 0) or "touchline" in cid
            if side_ok and lo + _TOL < abs(x) < hi - _TOL:
                points.append((x, y))
    points.sort()
    kps = np.array([[x, y, 0.0] for x, y in points])

    def members_on(a, b):
        d = segment_distance(kps[:, :2], np.asarray(a), np.asarray(b))
        return tuple(int(i) for i in np.flatnonzero(d < 1e-9))

    lines = []
    for lid, a, b in segments:
        lines.append(PitchLine(lid, "marking", a, b, members=members_on(a, b)))
    lines.append(PitchLine("halfway", "marking", (0.0, -hw), (0.0, hw), members=members_on((0.0, -hw), (0.0, hw))))
    for x in _stripe_xs():
        if abs(x) < _TOL:
            continue  # the halfway line doubles as this stripe boundary
        a, b = (x, -hw), (x, hw)
        lines.append(PitchLine(f"grass_{x:+.2f}", "grass", a, b, members=members_on(a, b)))

    lines.append(PitchLine("center_circle", "marking", center=(0.0, 0.0), radius=CENTER_CIRCLE_RADIUS))
    half_span = math.acos((PENALTY_AREA_DEPTH - PENALTY_SPOT_DISTANCE) / CENTER_CIRCLE_RADIUS)
    spot = hl - PENALTY_SPOT_DISTANCE
    lines.append(
        PitchLine("penalty_arc_left", "marking", center=(-spot, 0.0), radius=CENTER_CIRCLE_RADIUS, start=-half_span, end=half_span)
    )
    lines.append(
        PitchLine(
            "penalty_arc_right", "marking", center=(spot, 0.0), radius=CENTER_CIRCLE_RADIUS,
            start=math.pi - half_span, end=math.pi + half_span,
        )
    )
    areas = {"left": (-hl, -pa_y, -pa_x, pa_y), "right": (pa_x, -pa_y, hl, pa_y)}
    return PitchModel(LENGTH, WIDTH, tuple(lines), kps, areas)


def distance_to_model(p, model: PitchModel, lines: Optional[Sequence[int]] = None) -> np.ndarray:
    """Minimum distance from point(s) ``(..., 2)`` to the model geometry.

    ``lines`` restricts the search to a subset of line indices.
    """
    p = np.asarray(p, float)[..., :2]
    chosen = model.lines if lines is None else [model.lines[i] for i in lines]
    if not chosen:
        raise DomainError("no model lines to measure against")
    d = np.stack([ln.distance(p) for ln in chosen], 0)
    out = d.min(0)
    return float(out) if out.ndim == 0 else out


def in_penalty_area(p, side: str, model: Optional[PitchModel] = None):
    """Inclusive point-in-rectangle test for the ``left`` or ``right`` penalty area."""
    if side not in ("left", "right"):
        raise DomainError(f"side must be 'left' or 'right', got {side!r}")
    if model is None:
        model = _STANDARD
    x0, y0, x1, y1 = model.penalty_areas[side]
    p = np.asarray(p, float)
    inside = (p[..., 0] >= x0) & (p[..., 0] <= x1) & (p[..., 1] >= y0) & (p[..., 1] <= y1)
    return bool(inside) if inside.ndim == 0 else inside


_STANDARD = standard_pitch()
