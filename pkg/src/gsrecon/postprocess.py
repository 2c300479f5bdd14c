"""Tracklet refinement: split on attribute changes, merge by jersey, merge by ReID, interpolate.

Jersey readings come from two heads: the first gives (none, 1..9) for the
leading digit and the second gives 0..9. Team labels are the five cluster
names produced by :mod:`gsrecon.teams`.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DomainError
from .teams import LABELS, ClusterSet, assign_embedding, role_side

log = logging.getLogger(__name__)


@dataclass
class TrackRecord:
    frame: int
    x: float
    y: float
    reid: Optional[np.ndarray] = None
    team: Optional[np.ndarray] = None
    jersey_first: Optional[np.ndarray] = None
    jersey_second: Optional[np.ndarray] = None
    orient: Optional[str] = None
    label: Optional[str] = None  # per-frame team cluster label
    interpolated: bool = False


@dataclass
class Tracklet:
    id: int
    records: List[TrackRecord]
    label: Optional[str] = None
    role: Optional[str] = None
    side: Optional[str] = None
    jersey: Optional[int] = None

    def __post_init__(self):
        frames = [r.frame for r in self.records]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise DomainError(f"tracklet {self.id}: frames must be strictly increasing")

    @property
    def start(self) -> int:
        return self.records[0].frame

    @property
    def end(self) -> int:
        return self.records[-1].frame

    @property
    def frames(self) -> List[int]:
        return [r.frame for r in self.records]

    def positions(self) -> np.ndarray:
        return np.array([[r.x, r.y] for r in self.records], float).reshape(-1, 2)

    def reid_matrix(self) -> np.ndarray:
        rows = [r.reid for r in self.records if r.reid is not None]
        return np.array(rows, float) if rows else np.zeros((0, 0))

    def team_matrix(self) -> np.ndarray:
        rows = [r.team for r in self.records if r.team is not None]
        return np.array(rows, float) if rows else np.zeros((0, 0))


@dataclass
class MergeConfig:
    fps: float = 30.0
    max_speed: float = 12.0  # m/s
    mean_threshold: float = 0.3  # cosine distance between mean ReID vectors
    pairwise_threshold: float = 0.2  # cosine distance, closest pair
    max_gap: int = 90  # frames
    jersey_floor: float = 0.5
    jersey_majority: float = 0.6
    persistence: int = 3  # known readings a changed jersey or label must hold before it cuts

    def __post_init__(self):
        for name in ("fps", "max_speed", "mean_threshold", "pairwise_threshold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_gap < 1 or self.persistence < 1:
            raise ConfigError("max_gap and persistence must be >= 1")
        if not 0.0 <= self.jersey_floor <= 1.0 or not 0.0 < self.jersey_majority <= 1.0:
            raise ConfigError("jersey_floor in [0, 1] and jersey_majority in (0, 1] required")


@dataclass(frozen=True)
class JerseyReading:
    """Top class of each head. ``first`` is None for "no leading digit"."""

    first: Optional[int]
    first_conf: float
    second: int
    second_conf: float

    def __post_init__(self):
        if self.first is not None and not 1 <= self.first <= 9:
            raise DomainError(f"leading digit out of range: {self.first}")
        if not 0 <= self.second <= 9:
            raise DomainError(f"second digit out of range: {self.second}")
        for c in (self.first_conf, self.second_conf):
            if not 0.0 <= c <= 1.0:
                raise DomainError(f"confidence out of range: {c}")

    @classmethod
    def from_probs(cls, first_probs, second_probs) -> "JerseyReading":
        p1 = np.asarray(first_probs, float)
        p2 = np.asarray(second_probs, float)
        i, j = int(np.argmax(p1)), int(np.argmax(p2))
        return cls(None if i == 0 else i, float(p1[i]), j, float(p2[j]))


def decode_jersey(reading: JerseyReading) -> Tuple[int, float]:
    """Number in 0..99 and the product of the two head confidences."""
    number = reading.second if reading.first is None else 10 * reading.first + reading.second
    return number, reading.first_conf * reading.second_conf


def encode_jersey(number: Optional[int], conf: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Two-head distributions peaked (mass ``conf``) on ``number``; flat when ``number`` is None."""
    if number is None:
        return np.full(10, 0.1), np.full(10, 0.1)
    if not 0 <= number <= 99:
        raise DomainError(f"jersey number out of range: {number}")
    first, second = divmod(number, 10)

    def peaked(k):
        p = np.full(10, (1.0 - conf) / 9.0)
        p[k] = conf
        return p

    return peaked(first), peaked(second)


def _observed_jersey(rec: TrackRecord, floor: float) -> Optional[int]:
    if rec.jersey_first is None or rec.jersey_second is None:
        return None
    number, conf = decode_jersey(JerseyReading.from_probs(rec.jersey_first, rec.jersey_second))
    return number if conf >= floor else None


def aggregate_jersey(tracklet: Tracklet, config: Optional[MergeConfig] = None) -> Optional[int]:
    """Confidence-weighted vote; the winner needs ``jersey_majority`` of the mass."""
    config = config or MergeConfig()
    votes: Dict[int, float] = defaultdict(float)
    for rec in tracklet.records:
        if rec.jersey_first is None or rec.jersey_second is None:
            continue
        number, conf = decode_jersey(JerseyReading.from_probs(rec.jersey_first, rec.jersey_second))
        if conf >= config.jersey_floor:
            votes[number] += conf
    if not votes:
        return None
    total = sum(votes.values())
    number, mass = min(votes.items(), key=lambda kv: (-kv[1], kv[0]))
    return number if mass >= config.jersey_majority * total - 1e-12 else None


def majority_label(tracklet: Tracklet) -> Optional[str]:
    counts: Dict[str, int] = defaultdict(int)
    for rec in tracklet.records:
        if rec.label is not None:
            counts[rec.label] += 1
    if not counts:
        return None
    return min(counts, key=lambda k: (-counts[k], LABELS.index(k) if k in LABELS else len(LABELS), k))


def _stable(values: Sequence, persistence: int) -> List:
    """Blank out transient runs among the known values.

    Known values form runs of equal consecutive entries (unknowns skipped).
    While some run is shorter than ``persistence`` and other runs exist, the
    shortest (earliest on ties) is blanked and its neighbours may fuse.
    """
    out = list(values)
    if persistence <= 1:
        return out
    while True:
        known = [i for i, v in enumerate(out) if v is not None]
        runs: List[List[int]] = []
        for i in known:
            if runs and out[runs[-1][-1]] == out[i]:
                runs[-1].append(i)
            else:
                runs.append([i])
        if len(runs) <= 1:
            return out
        short = [r for r in runs if len(r) < persistence]
        if not short:
            return out
        for i in min(short, key=lambda r: (len(r), r[0])):
            out[i] = None


def split_by_attributes(tracklet: Tracklet, config: Optional[MergeConfig] = None) -> List[Tracklet]:
    """Cut wherever a known jersey number or team label differs from the running one.

    Unknown observations never cause a cut. A reading only counts once it
    persists for ``config.persistence`` known observations (see ``_stable``).
    Pieces keep the input id and records; callers renumber.
    """
    config = config or MergeConfig()
    jerseys = _stable([_observed_jersey(r, config.jersey_floor) for r in tracklet.records], config.persistence)
    labels = _stable([r.label for r in tracklet.records], config.persistence)
    pieces: List[List[TrackRecord]] = [[]]
    cur_j: Optional[int] = None
    cur_l: Optional[str] = None
    for rec, j, lab in zip(tracklet.records, jerseys, labels):
        if (j is not None and cur_j is not None and j != cur_j) or (lab is not None and cur_l is not None and lab != cur_l):
            pieces.append([])
            cur_j, cur_l = None, None
        pieces[-1].append(rec)
        cur_j = j if j is not None else cur_j
        cur_l = lab if lab is not None else cur_l
    return [Tracklet(tracklet.id, recs, tracklet.label, tracklet.role, tracklet.side, tracklet.jersey) for recs in pieces if recs]


def drop_conflicting_jerseys(tracklets: Sequence[Tracklet]) -> List[Tracklet]:
    """Discard jersey readings of tracklets that clash with a longer one.

    One number belongs to one athlete per team at any instant. When two
    tracklets with the same (jersey, label) share a frame, the shorter one
    (fewer records, then later start, then larger id) loses its readings and
    its jersey. Its records remain for the ReID stage.
    """
    occupied: Dict[Tuple[int, Optional[str]], set] = defaultdict(set)
    out: Dict[int, Tracklet] = {}
    order = sorted(range(len(tracklets)), key=lambda i: (-len(tracklets[i].records), tracklets[i].start, tracklets[i].id, i))
    for i in order:
        t = tracklets[i]
        if t.jersey is None:
            out[i] = t
            continue
        key = (t.jersey, t.label)
        frames = set(t.frames)
        if frames & occupied[key]:
            recs = [dataclasses.replace(r, jersey_first=None, jersey_second=None) for r in t.records]
            out[i] = dataclasses.replace(t, records=recs, jersey=None)
        else:
            occupied[key] |= frames
            out[i] = t
    return [out[i] for i in range(len(tracklets))]


def feasible(earlier: Tracklet, later: Tracklet, config: Optional[MergeConfig] = None) -> bool:
    """No time overlap and the gap is coverable at ``max_speed``."""
    config = config or MergeConfig()
    if later.start <= earlier.end:
        return False
    gap = (later.start - earlier.end) / config.fps
    a, b = earlier.records[-1], later.records[0]
    return math.hypot(b.x - a.x, b.y - a.y) <= config.max_speed * gap


def _gap_distance(a: Tracklet, b: Tracklet) -> float:
    return math.hypot(b.records[0].x - a.records[-1].x, b.records[0].y - a.records[-1].y)


def _concat(chain: Sequence[Tracklet], config: MergeConfig) -> Tracklet:
    records = [r for t in chain for r in t.records]
    head = chain[0]
    out = Tracklet(head.id, records, head.label, head.role, head.side)
    out.jersey = aggregate_jersey(out, config)
    return out


def _chains_from_links(tracklets: Sequence[Tracklet], links: Dict[int, int]) -> List[List[int]]:
    has_pred = set(links.values())
    chains = []
    for i in range(len(tracklets)):
        if i in has_pred:
            continue
        chain = [i]
        while chain[-1] in links:
            chain.append(links[chain[-1]])
        chains.append(chain)
    return chains


def merge_by_jersey(tracklets: Sequence[Tracklet], config: Optional[MergeConfig] = None) -> List[Tracklet]:
    """Join tracklets sharing (jersey, team label) into as few chains as possible.

    Within each group the feasible earlier-to-later links form a DAG; a
    maximum matching on it is a minimum chain cover, and among maximum
    matchings the one with the least total gap distance is taken.
    """
    config = config or MergeConfig()
    tracklets = list(tracklets)
    groups: Dict[Tuple[int, str], List[int]] = defaultdict(list)
    for i, t in enumerate(tracklets):
        if t.jersey is not None:
            groups[(t.jersey, t.label)].append(i)
    links: Dict[int, int] = {}
    for key in sorted(groups, key=lambda k: (k[0], str(k[1]))):
        idx = sorted(groups[key], key=lambda i: (tracklets[i].start, tracklets[i].id))
        n = len(idx)
        if n < 2:
            continue
        cost = np.full((n, n), math.inf)
        for a in range(n):
            for b in range(n):
                if a != b and feasible(tracklets[idx[a]], tracklets[idx[b]], config):
                    cost[a, b] = _gap_distance(tracklets[idx[a]], tracklets[idx[b]])
        for a, b in _max_matching(cost):
            links[idx[a]] = idx[b]
    merged = [_concat([tracklets[i] for i in chain], config) for chain in _chains_from_links(tracklets, links)]
    return sorted(merged, key=lambda t: (t.start, t.id))


def _max_matching(cost: np.ndarray) -> List[Tuple[int, int]]:
    feasible_mask = np.isfinite(cost)
    if not feasible_mask.any():
        return []
    big = (cost[feasible_mask].max() + 1.0) * (min(cost.shape) + 1) * 10.0
    rows, cols = linear_sum_assignment(np.where(feasible_mask, cost, big))
    return [(int(r), int(c)) for r, c in zip(rows, cols) if feasible_mask[r, c]]


def _unit_mean(m: np.ndarray) -> np.ndarray:
    if m.size == 0:
        raise DomainError("tracklet has no ReID embeddings")
    v = m.mean(0)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DomainError("mean ReID embedding is zero")
    return v / n


def reid_mean_distance(a: Tracklet, b: Tracklet) -> float:
    return float(np.clip(1.0 - _unit_mean(a.reid_matrix()) @ _unit_mean(b.reid_matrix()), 0.0, 2.0))


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-12)


def reid_pairwise_min(a: Tracklet, b: Tracklet) -> float:
    ma, mb = a.reid_matrix(), b.reid_matrix()
    if ma.size == 0 or mb.size == 0:
        raise DomainError("tracklet has no ReID embeddings")
    return float(np.clip(1.0 - (_unit_rows(ma) @ _unit_rows(mb).T).max(), 0.0, 2.0))


def merge_by_reid(tracklets: Sequence[Tracklet], config: Optional[MergeConfig] = None) -> List[Tracklet]:
    """Link feasible, team-consistent pairs with similar ReID, closest mean first.

    Only pairs where at least one side has no jersey number are considered.
    Each tracklet gets at most one successor and one predecessor per pass, and
    a chain may never collect two different jersey numbers. Passes repeat
    until nothing changes.
    """
    config = config or MergeConfig()
    current = list(tracklets)
    while True:
        merged = _reid_pass(current, config)
        if len(merged) == len(current):
            return merged
        current = merged


def _reid_pass(tracklets: List[Tracklet], config: MergeConfig) -> List[Tracklet]:
    n = len(tracklets)
    means = []
    for t in tracklets:
        m = t.reid_matrix()
        means.append(_unit_mean(m) if m.size else None)
    units = [(_unit_rows(t.reid_matrix()) if t.reid_matrix().size else None) for t in tracklets]
    cands = []
    for i in range(n):
        a = tracklets[i]
        if means[i] is None:
            continue
        for j in range(n):
            b = tracklets[j]
            if i == j or means[j] is None or a.label != b.label:
                continue
            if a.jersey is not None and b.jersey is not None:
                continue
            if not feasible(a, b, config):
                continue
            md = float(np.clip(1.0 - means[i] @ means[j], 0.0, 2.0))
            if md >= config.mean_threshold:
                pm = float(np.clip(1.0 - (units[i] @ units[j].T).max(), 0.0, 2.0))
                if pm >= config.pairwise_threshold:
                    continue
            cands.append((md, a.id, b.id, i, j))
    cands.sort()
    parent = list(range(n))
    jerseys = [{t.jersey} - {None} for t in tracklets]

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    links: Dict[int, int] = {}
    has_pred = set()
    for _, _, _, i, j in cands:
        if i in links or j in has_pred:
            continue
        ri, rj = find(i), find(j)
        if ri == rj or len(jerseys[ri] | jerseys[rj]) > 1:
            continue
        links[i] = j
        has_pred.add(j)
        parent[rj] = ri
        jerseys[ri] = jerseys[ri] | jerseys[rj]
    if not links:
        return tracklets
    merged = [_concat([tracklets[k] for k in chain], config) for chain in _chains_from_links(tracklets, links)]
    return sorted(merged, key=lambda t: (t.start, t.id))


def interpolate(tracklet: Tracklet, config: Optional[MergeConfig] = None) -> Tracklet:
    """Fill interior gaps of at most ``max_gap`` missing frames linearly in position."""
    config = config or MergeConfig()
    out: List[TrackRecord] = []
    recs = tracklet.records
    for a, b in zip(recs, recs[1:]):
        out.append(a)
        missing = b.frame - a.frame - 1
        if 0 < missing <= config.max_gap:
            for f in range(a.frame + 1, b.frame):
                s = (f - a.frame) / (b.frame - a.frame)
                out.append(TrackRecord(f, a.x + s * (b.x - a.x), a.y + s * (b.y - a.y), label=tracklet.label, interpolated=True))
    if recs:
        out.append(recs[-1])
    return dataclasses.replace(tracklet, records=out)


def label_records(tracklets: Sequence[Tracklet], clusters: ClusterSet) -> List[Tracklet]:
    """Per-frame team label from each record's own team embedding."""
    out = []
    for t in tracklets:
        recs = [dataclasses.replace(r, label=assign_embedding(r.team, clusters)) if r.team is not None else r for r in t.records]
        out.append(dataclasses.replace(t, records=recs))
    return out


def resolve(tracklet: Tracklet, clusters: Optional[ClusterSet], config: MergeConfig) -> Tracklet:
    """Tracklet-level label (mean team embedding), role, side and jersey."""
    label = tracklet.label
    teams = tracklet.team_matrix()
    if clusters is not None and teams.size:
        label = assign_embedding(teams.mean(0), clusters)
    elif label is None:
        label = majority_label(tracklet)
    role, side = role_side(label) if label is not None else (None, None)
    jersey = aggregate_jersey(tracklet, config)
    if role == "referee":
        jersey = None
    return dataclasses.replace(tracklet, label=label, role=role, side=side, jersey=jersey)


def _renumber(tracklets: Iterable[Tracklet]) -> List[Tracklet]:
    ordered = sorted(tracklets, key=lambda t: (t.start, t.end, t.records[0].x, t.records[0].y, t.id))
    return [dataclasses.replace(t, id=k) for k, t in enumerate(ordered, 1)]


def run_postprocess(tracklets: Sequence[Tracklet], clusters: Optional[ClusterSet], config: Optional[MergeConfig] = None) -> List[Tracklet]:
    """Full refinement; the output is a fixed point (running it again changes nothing)."""
    config = config or MergeConfig()
    current = list(tracklets)
    if clusters is not None:
        current = label_records(current, clusters)
    pieces = [p for t in current for p in split_by_attributes(t, config)]
    current = [resolve(t, clusters, config) for t in _renumber(pieces)]
    current = [resolve(t, clusters, config) for t in drop_conflicting_jerseys(current)]
    while True:
        n = len(current)
        current = [resolve(t, clusters, config) for t in merge_by_jersey(current, config)]
        current = [resolve(t, clusters, config) for t in merge_by_reid(current, config)]
        if len(current) == n:
            break
    return _renumber(interpolate(t, config) for t in current)
