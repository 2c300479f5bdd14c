"""Team detection from TeamID embeddings and pitch positions.

Three main clusters (two teams and referees) come from athletes near the
halfway line, goalkeeper clusters from penalty-area athletes that are far
from all three, and the left/right naming from per-frame votes on where the
largest cluster stands.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DegeneracyError, DomainError, InsufficientDataError, UnresolvedError
from .pitch import in_penalty_area

log = logging.getLogger(__name__)

LABELS = ("team_left", "team_right", "referee", "gk_left", "gk_right")
_ROLE_SIDE = {
    "team_left": ("player", "left"),
    "team_right": ("player", "right"),
    "referee": ("referee", "none"),
    "gk_left": ("goalkeeper", "left"),
    "gk_right": ("goalkeeper", "right"),
}
_TIE = 1e-12


def role_side(label: str) -> Tuple[str, str]:
    return _ROLE_SIDE[label]


def _unit(v) -> np.ndarray:
    v = np.asarray(v, float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DomainError("zero-length embedding")
    return v / n


@dataclass(frozen=True)
class AthleteSample:
    frame: int
    x: float
    y: float
    team: np.ndarray
    tracklet: int = -1

    def __post_init__(self):
        t = np.asarray(self.team, float)
        if abs(np.linalg.norm(t) - 1.0) > 1e-6:
            raise DomainError("team embedding must be unit-norm")
        object.__setattr__(self, "team", t)


@dataclass
class ClusterSet:
    """Unit centroids keyed by label; goalkeeper entries may be missing."""

    centroids: Dict[str, np.ndarray]
    votes: Dict[str, int] = field(default_factory=dict)
    fallback: bool = False

    def __post_init__(self):
        for k, v in list(self.centroids.items()):
            if k not in LABELS:
                raise DomainError(f"unknown cluster label {k!r}")
            self.centroids[k] = _unit(v)

    def available(self) -> List[str]:
        return [k for k in LABELS if k in self.centroids]

    def to_dict(self) -> dict:
        return {
            "centroids": {k: [float(x) for x in self.centroids[k]] for k in self.available()},
            "votes": dict(self.votes),
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterSet":
        return cls({k: np.asarray(v, float) for k, v in d["centroids"].items()}, dict(d.get("votes", {})), bool(d.get("fallback", False)))


@dataclass
class TeamConfig:
    central_half_width: float = 30.0  # m, strict |x| bound for the main query
    exclusion: float = 0.3  # cosine distance a goalkeeper sample must keep from every main centroid
    stride: int = 5  # frames between votes
    fallback_min_seconds: float = 10.0
    fallback_pan: float = 0.3  # rad, mean |pan| above which only one half is in view
    force_fallback: bool = False
    max_iter: int = 100

    def __post_init__(self):
        if self.central_half_width <= 0 or self.exclusion <= 0 or self.fallback_pan <= 0:
            raise ConfigError("central_half_width, exclusion and fallback_pan must be positive")
        if self.stride < 1 or self.max_iter < 1:
            raise ConfigError("stride and max_iter must be >= 1")


def central_query(samples: Sequence[AthleteSample], half_width: float = 30.0) -> List[AthleteSample]:
    return [s for s in samples if abs(s.x) < half_width]


def outside_penalty_query(samples: Sequence[AthleteSample]) -> List[AthleteSample]:
    return [s for s in samples if not (in_penalty_area((s.x, s.y), "left") or in_penalty_area((s.x, s.y), "right"))]


def _pick(scores: np.ndarray, x: np.ndarray) -> int:
    """Index of the maximum score; near-ties go to the lexicographically smallest row."""
    cand = np.flatnonzero(scores >= scores.max() - _TIE)
    if len(cand) == 1:
        return int(cand[0])
    rows = x[cand]
    return int(cand[np.lexsort(rows.T[::-1])[0]])


@dataclass
class MainClusters:
    centroids: np.ndarray  # (3, D), largest first
    sizes: Tuple[int, int, int]
    assignment: np.ndarray  # per input sample, index into centroids


def cluster_main(samples: Sequence[AthleteSample], k: int = 3, max_iter: int = 100) -> MainClusters:
    """Spherical k-means with farthest-point seeding.

    The first seed is the sample closest to the mean direction; each further
    seed is the sample farthest from the seeds so far. Nothing depends on
    sample order. Clusters come back sorted by size, ties by seeding order.
    """
    if len(samples) < k:
        raise InsufficientDataError(f"need at least {k} samples, got {len(samples)}")
    x = np.array([s.team for s in samples], float)
    if np.ptp(x, axis=0).max() < 1e-12:
        raise DegeneracyError("all embeddings are identical")
    seeds = [_pick(x @ x.mean(0), x)]
    for _ in range(1, k):
        nearest = (x @ x[seeds].T).max(1)
        seeds.append(_pick(-nearest, x))
    cent = x[seeds].copy()
    if len({tuple(np.round(c, 12)) for c in cent}) < k:
        raise DegeneracyError("fewer distinct embeddings than clusters")
    assign = np.full(len(x), -1)
    for _ in range(max_iter):
        new = np.argmax(x @ cent.T, axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = x[assign == j]
            if len(members):
                m = members.sum(0)
                n = np.linalg.norm(m)
                if n > 1e-12:
                    cent[j] = m / n
    sizes = np.bincount(assign, minlength=k)
    order = sorted(range(k), key=lambda j: (-sizes[j], j))
    remap = np.empty(k, int)
    remap[order] = np.arange(k)
    return MainClusters(cent[order], tuple(int(sizes[j]) for j in order), remap[assign])


def estimate_goalkeepers(
    samples: Sequence[AthleteSample], main_centroids: np.ndarray, side: str, exclusion: float = 0.3
) -> Optional[np.ndarray]:
    """Renormalised mean of penalty-area embeddings far from all main centroids; None if none survive."""
    boxed = [s for s in samples if in_penalty_area((s.x, s.y), side)]
    if not boxed:
        return None
    x = np.array([s.team for s in boxed])
    dist = 1.0 - x @ np.asarray(main_centroids, float).T
    keep = (dist > exclusion).all(1)
    if not keep.any():
        return None
    return _unit(x[keep].mean(0))


def vote_left_right(
    samples: Sequence[AthleteSample], main_centroids: np.ndarray, stride: int = 5, reference: int = 0
) -> Tuple[str, Dict[str, int]]:
    """Side of the reference cluster by one vote per processed frame.

    A frame is processed when its index is a multiple of ``stride``. Members
    are samples whose nearest main centroid is the reference. A frame votes
    left when its members' mean x is negative. Ties go to the sign of the
    mean x over all counted members.
    """
    cent = np.asarray(main_centroids, float)
    per_frame: Dict[int, List[float]] = {}
    for s in samples:
        if s.frame % stride:
            continue
        if int(np.argmax(cent @ s.team)) == reference:
            per_frame.setdefault(s.frame, []).append(s.x)
    if not per_frame:
        raise UnresolvedError("no frame has members of the reference cluster")
    left = sum(1 for xs in per_frame.values() if np.mean(xs) < 0)
    right = len(per_frame) - left
    tally = {"left": left, "right": right}
    if left != right:
        return ("left" if left > right else "right"), tally
    total = np.mean([x for f in sorted(per_frame) for x in per_frame[f]])
    return ("left" if total < 0 else "right"), tally


def assign_embedding(embedding, clusters: ClusterSet) -> str:
    """Label of the nearest available centroid; ties follow the label order."""
    e = _unit(embedding)
    labels = clusters.available()
    sims = np.array([clusters.centroids[k] @ e for k in labels])
    return labels[int(np.flatnonzero(sims >= sims.max() - _TIE)[0])]


def assign_tracklet(embeddings, clusters: ClusterSet) -> Tuple[str, str]:
    """(role, side) of a tracklet from its mean team embedding."""
    m = np.asarray(embeddings, float).reshape(-1, np.asarray(embeddings).shape[-1])
    if len(m) == 0:
        raise InsufficientDataError("tracklet has no team embeddings")
    return role_side(assign_embedding(m.mean(0), clusters))


def needs_fallback(config: TeamConfig, duration: float, pans: Optional[Sequence[float]] = None) -> bool:
    if config.force_fallback or duration < config.fallback_min_seconds:
        return True
    return bool(pans is not None and len(pans) and np.mean(np.abs(pans)) > config.fallback_pan)


def build_clusters(
    samples: Sequence[AthleteSample], config: Optional[TeamConfig] = None, duration: float = float("inf"),
    pans: Optional[Sequence[float]] = None,
) -> ClusterSet:
    """Estimate all five clusters and name the teams."""
    config = config or TeamConfig()
    fallback = needs_fallback(config, duration, pans)
    query = outside_penalty_query(samples) if fallback else central_query(samples, config.central_half_width)
    if len(query) < 3 and not fallback:
        log.info("central query too small (%d samples); using athletes outside the penalty areas", len(query))
        fallback = True
        query = outside_penalty_query(samples)
    main = cluster_main(query, max_iter=config.max_iter)
    team_gap = 1.0 - float(main.centroids[0] @ main.centroids[1])
    if team_gap < config.exclusion:
        raise DegeneracyError(f"team centroids too close (cosine distance {team_gap:.3f})")
    side, tally = vote_left_right(samples, main.centroids, config.stride)
    first, second = ("team_left", "team_right") if side == "left" else ("team_right", "team_left")
    cents = {first: main.centroids[0], second: main.centroids[1], "referee": main.centroids[2]}
    for gk_side in ("left", "right"):
        c = estimate_goalkeepers(samples, main.centroids, gk_side, config.exclusion)
        if c is None:
            log.warning("no goalkeeper cluster found for the %s side", gk_side)
        else:
            cents[f"gk_{gk_side}"] = c
    return ClusterSet(cents, tally, fallback)


def samples_from_tracklets(tracklets: Iterable) -> List[AthleteSample]:
    """One sample per record carrying a team embedding."""
    out = []
    for t in tracklets:
        for r in t.records:
            if r.team is not None:
                out.append(AthleteSample(r.frame, r.x, r.y, r.team, t.id))
    return out
