"""GS-HOTA: HOTA where a match needs both a close pitch position and identical attributes.

Pair similarity is a Gaussian of the pitch distance times an exact-match
indicator on (role, side, jersey). For each threshold alpha, every frame is
matched on the pairs whose similarity reaches alpha, maximising the total
similarity of the matched pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DomainError, SchemaError

ROLES = ("player", "goalkeeper", "referee", "other")
SIDES = ("left", "right", "none")
ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))
TAU = 5.0  # m


@dataclass(frozen=True)
class GsRecord:
    frame: int
    id: int
    x: float
    y: float
    role: str = "player"
    side: str = "none"
    jersey: Optional[int] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise DomainError(f"unknown role {self.role!r}")
        if self.side not in SIDES:
            raise DomainError(f"unknown side {self.side!r}")
        if self.jersey is not None and not 0 <= self.jersey <= 99:
            raise DomainError(f"jersey out of range: {self.jersey}")


@dataclass
class EvalScores:
    gs_hota: float
    gs_deta: float
    gs_assa: float
    per_alpha: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"gs_hota": self.gs_hota, "gs_deta": self.gs_deta, "gs_assa": self.gs_assa, "per_alpha": self.per_alpha}


def loc_sim(d, tau: float = TAU):
    """exp(-d^2 / (2 tau^2)); equals exp(-0.5) at d = tau."""
    d = np.asarray(d, float)
    if (d < 0).any():
        raise DomainError("distance must be non-negative")
    out = np.exp(-(d ** 2) / (2.0 * tau ** 2))
    return float(out) if out.ndim == 0 else out


def id_sim(a: GsRecord, b: GsRecord) -> int:
    return int(a.role == b.role and a.side == b.side and a.jersey == b.jersey)


def _by_frame(records: Sequence[GsRecord], name: str) -> Dict[int, List[GsRecord]]:
    seen = set()
    out: Dict[int, List[GsRecord]] = {}
    for r in records:
        key = (r.frame, r.id)
        if key in seen:
            raise SchemaError(f"duplicate {name} record for frame {r.frame}, id {r.id}")
        seen.add(key)
        out.setdefault(r.frame, []).append(r)
    return out


def similarity_matrix(gt: Sequence[GsRecord], pred: Sequence[GsRecord], tau: float = TAU) -> np.ndarray:
    if not gt or not pred:
        return np.zeros((len(gt), len(pred)))
    g = np.array([[r.x, r.y] for r in gt])
    p = np.array([[r.x, r.y] for r in pred])
    d = np.linalg.norm(g[:, None] - p[None], axis=-1)
    ids = np.array([[id_sim(a, b) for b in pred] for a in gt], float)
    return loc_sim(d, tau) * ids


def match_frame(sim: np.ndarray, alpha: float) -> List[Tuple[int, int]]:
    """Maximum total similarity matching over the pairs with sim >= alpha."""
    ok = sim >= alpha
    if not ok.any():
        return []
    weight = np.where(ok, sim, 0.0)
    rows, cols = linear_sum_assignment(weight, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if ok[r, c]]


def hota_from_matches(
    matches: Dict[int, List[Tuple[int, int]]], gt_counts: Dict[int, int], pred_counts: Dict[int, int],
) -> Tuple[float, float, float]:
    """DetA, AssA and HOTA (fractions) from per-frame (gt id, pred id) matches."""
    tp = sum(len(m) for m in matches.values())
    n_gt = sum(gt_counts.values())
    n_pred = sum(pred_counts.values())
    fn, fp = n_gt - tp, n_pred - tp
    det_a = tp / max(1, tp + fn + fp)
    pair_counts: Dict[Tuple[int, int], int] = {}
    for m in matches.values():
        for pair in m:
            pair_counts[pair] = pair_counts.get(pair, 0) + 1
    ass = 0.0
    for (g, p), n in pair_counts.items():
        ass += n * n / max(1, gt_counts[g] + pred_counts[p] - n)
    ass_a = ass / max(1, tp)
    return det_a, ass_a, math.sqrt(det_a * ass_a)


def gs_hota(
    gt: Sequence[GsRecord], pred: Sequence[GsRecord], tau: float = TAU, alphas: Sequence[float] = ALPHAS,
    exclude_roles: Iterable[str] = ("other",),
) -> EvalScores:
    """GS-HOTA, GS-DetA and GS-AssA as percentages averaged over ``alphas``."""
    excl = set(exclude_roles)
    gt = [r for r in gt if r.role not in excl]
    pred = [r for r in pred if r.role not in excl]
    gf, pf = _by_frame(gt, "ground-truth"), _by_frame(pred, "prediction")
    gt_counts: Dict[int, int] = {}
    pred_counts: Dict[int, int] = {}
    for r in gt:
        gt_counts[r.id] = gt_counts.get(r.id, 0) + 1
    for r in pred:
        pred_counts[r.id] = pred_counts.get(r.id, 0) + 1
    sims = {f: similarity_matrix(gf.get(f, []), pf.get(f, []), tau) for f in set(gf) | set(pf)}
    rows = []
    for alpha in alphas:
        matches = {}
        for f, s in sims.items():
            pairs = match_frame(s, alpha)
            matches[f] = [(gf[f][i].id, pf[f][j].id) for i, j in pairs]
        det_a, ass_a, hota = hota_from_matches(matches, gt_counts, pred_counts)
        rows.append({"alpha": alpha, "deta": 100 * det_a, "assa": 100 * ass_a, "hota": 100 * hota})
    mean = lambda k: float(np.mean([r[k] for r in rows])) if rows else 0.0
    return EvalScores(mean("hota"), mean("deta"), mean("assa"), rows)
