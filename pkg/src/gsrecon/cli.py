"""Command-line entry point and file-level pipeline stages.

Each ``cmd_*`` function reads its inputs from files and writes its outputs
atomically, so running the stages one by one produces the same bytes as
``cmd_run_all``. An input is looked up in the input directory first and then
in the output directory, which is where earlier stages leave their results.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

from . import formats as F
from . import pipeline
from .config import PipelineConfig, load_config
from .errors import ConfigError, GsrError, SchemaError
from .evaluation import EvalScores, GsRecord, gs_hota
from .pitch import PitchModel
from .synthetic import fragment_tracklets, ground_truth_tracklets, render_observations, simulate_match
from .teams import ClusterSet

log = logging.getLogger("gsrecon")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_SCHEMA = 5

PX_PER_M = 10.0
COLORS = {
    ("player", "left"): "#1f5fbf",
    ("player", "right"): "#c8322d",
    ("goalkeeper", "left"): "#7fb4ff",
    ("goalkeeper", "right"): "#ff9a3c",
    ("referee", "none"): "#111111",
}
OTHER_COLOR = "#8c8c8c"


def _find(name: str, in_dir: Path, out_dir: Optional[Path] = None) -> Path:
    for d in (in_dir, out_dir):
        if d is not None and (Path(d) / name).exists():
            return Path(d) / name
    raise FileNotFoundError(f"input file not found: {Path(in_dir) / name}")


# stages ---------------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig, out_dir) -> List[Path]:
    """Simulate a clip and write its observations and ground truth."""
    out = Path(out_dir)
    gt = simulate_match(cfg.sim)
    obs = render_observations(gt, cfg.sim)
    written = [out / F.DETECTIONS, out / F.KEYPOINTS, out / F.CAMERA_INIT, out / F.GT_CAMERA, out / F.GT_GAMESTATE]
    F.write_detections(written[0], obs.detections)
    F.write_keypoints(written[1], obs.keypoints)
    F.write_cameras(written[2], obs.initial_cameras, refined=False)
    F.write_cameras(written[3], gt.cameras, refined=False)
    F.write_gamestate(written[4], [GsRecord(**r) for r in gt.gamestate()])
    if cfg.sim.fragment_pieces > 0:
        pieces = fragment_tracklets(ground_truth_tracklets(gt, obs), cfg.sim.fragment_pieces, cfg.sim.seed)
        written.append(out / F.FRAGMENTS)
        F.write_tracklets(written[-1], pieces)
    log.info("synth: %d frames, %d identities -> %s", gt.n_frames, len(gt.identities), out)
    return written


def cmd_calibrate(cfg: PipelineConfig, in_dir, out_dir) -> Path:
    """Refine and smooth the initial cameras against the detected keypoints."""
    initial = F.read_cameras(_find(F.CAMERA_INIT, in_dir, out_dir))
    keypoints = F.read_keypoints(_find(F.KEYPOINTS, in_dir, out_dir))
    cams = pipeline.calibrate(initial, keypoints, cfg)
    path = Path(out_dir) / F.CAMERA
    F.write_cameras(path, [cams[f] for f in sorted(cams)], refined=True, frames=sorted(cams))
    log.info("calibrate: %d frames -> %s", len(cams), path)
    return path


def cmd_track(cfg: PipelineConfig, in_dir, out_dir) -> Path:
    """Raw tracking on the pitch positions given by the refined cameras."""
    dets = F.read_detections(_find(F.DETECTIONS, in_dir, out_dir))
    cams = F.read_cameras(_find(F.CAMERA, in_dir, out_dir))
    tracklets, ball = pipeline.track(dets, cams, cfg)
    path = Path(out_dir) / F.TRACKLETS
    F.write_tracklets(path, tracklets, ball)
    log.info("track: %d tracklets, %d ball frames -> %s", len(tracklets), len(ball), path)
    return path


def cmd_teams(cfg: PipelineConfig, in_dir, out_dir) -> Path:
    """Cluster team embeddings and assign every raw tracklet."""
    tracklets, _ = F.read_tracklets(_find(F.TRACKLETS, in_dir, out_dir))
    try:
        cams = F.read_cameras(_find(F.CAMERA, in_dir, out_dir))
    except FileNotFoundError:
        cams = {}
    clusters = pipeline.detect_teams(tracklets, cams, cfg)
    doc = {
        "clusters": None if clusters is None else clusters.to_dict(),
        "assignments": pipeline.assignments(tracklets, clusters),
    }
    path = Path(out_dir) / F.TEAMS
    F.write_json(path, doc)
    log.info("teams: %s -> %s", "no clusters" if clusters is None else ", ".join(clusters.available()), path)
    return path


def _read_clusters(path: Path) -> Optional[ClusterSet]:
    doc = F.read_json(path)
    if not isinstance(doc, dict) or "clusters" not in doc:
        raise SchemaError("teams file must be an object with a 'clusters' entry", path)
    if doc["clusters"] is None:
        return None
    try:
        return ClusterSet.from_dict(doc["clusters"])
    except (KeyError, TypeError, ValueError, GsrError) as e:
        raise SchemaError(f"invalid cluster set: {e}", path) from None


def cmd_postprocess(cfg: PipelineConfig, in_dir, out_dir) -> Path:
    """Split, merge and interpolate tracklets; write the game state."""
    tracklets, _ = F.read_tracklets(_find(F.TRACKLETS, in_dir, out_dir))
    clusters = _read_clusters(_find(F.TEAMS, in_dir, out_dir))
    records = pipeline.postprocess(tracklets, clusters, cfg)
    path = Path(out_dir) / F.GAMESTATE
    F.write_gamestate(path, records)
    log.info("postprocess: %d tracklets in, %d ids out -> %s", len(tracklets), len({r.id for r in records}), path)
    return path


def format_scores(s: EvalScores) -> str:
    return f"GS-HOTA {s.gs_hota:.2f}  GS-DetA {s.gs_deta:.2f}  GS-AssA {s.gs_assa:.2f}\n"


def cmd_eval(cfg: PipelineConfig, gt_path, pred_path, out_dir=None) -> EvalScores:
    """Score a predicted game state against ground truth."""
    gt = F.read_gamestate(gt_path)
    pred = F.read_gamestate(pred_path)
    try:
        scores = gs_hota(gt, pred, cfg.eval.tau, exclude_roles=cfg.eval.exclude_roles)
    except SchemaError as e:
        raise SchemaError(str(e), pred_path) from None
    if out_dir is not None:
        F.write_json(Path(out_dir) / F.SCORES, scores.to_dict())
        F.atomic_write_text(Path(out_dir) / F.SCORES_TXT, format_scores(scores))
    return scores


def cmd_run_all(cfg: PipelineConfig, in_dir, out_dir) -> Optional[EvalScores]:
    """Calibration, raw tracking, team detection, post-processing, then scoring if ground truth exists."""
    cmd_calibrate(cfg, in_dir, out_dir)
    cmd_track(cfg, in_dir, out_dir)
    cmd_teams(cfg, in_dir, out_dir)
    pred = cmd_postprocess(cfg, in_dir, out_dir)
    gt = Path(in_dir) / F.GT_GAMESTATE
    if not gt.exists():
        return None
    return cmd_eval(cfg, gt, pred, out_dir)


# minimap --------------------------------------------------------------------

def _svg_xy(x: float, y: float, model: PitchModel) -> Tuple[float, float]:
    return (x + model.length / 2) * PX_PER_M, (y + model.width / 2) * PX_PER_M


def _pitch_svg(model: PitchModel) -> List[str]:
    parts = []
    for ln in model.lines:
        if ln.kind != "marking":
            continue
        if ln.is_arc:
            sx, sy = _svg_xy(ln.center[0] + ln.radius * math.cos(ln.start), ln.center[1] + ln.radius * math.sin(ln.start), model)
            ex, ey = _svg_xy(ln.center[0] + ln.radius * math.cos(ln.end), ln.center[1] + ln.radius * math.sin(ln.end), model)
            sweep = ln.end - ln.start
            large = 1 if abs(sweep) > math.pi else 0
            r = ln.radius * PX_PER_M
            if abs(abs(sweep) - 2 * math.pi) < 1e-9:
                cx, cy = _svg_xy(ln.center[0], ln.center[1], model)
                parts.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="{r:.1f}" class="line"/>')
            else:
                parts.append(f'<path d="M {sx:.1f} {sy:.1f} A {r:.1f} {r:.1f} 0 {large} {1 if sweep > 0 else 0} {ex:.1f} {ey:.1f}" class="line"/>')
        else:
            ax, ay = _svg_xy(ln.a[0], ln.a[1], model)
            bx, by = _svg_xy(ln.b[0], ln.b[1], model)
            parts.append(f'<line x1="{ax:.1f}" y1="{ay:.1f}" x2="{bx:.1f}" y2="{by:.1f}" class="line"/>')
    return parts


def minimap_svg(records: Sequence[GsRecord], model: PitchModel, frame: int) -> str:
    """One frame of the top view: pitch lines and a disc per athlete, camera side at the bottom."""
    w, h = model.length * PX_PER_M, model.width * PX_PER_M
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" viewBox="0 0 {w:.0f} {h:.0f}">',
        "<style>.line{fill:none;stroke:#ffffff;stroke-width:2}.num{font:bold 9px sans-serif;fill:#ffffff;"
        "text-anchor:middle;dominant-baseline:central}</style>",
        f'<rect width="{w:.0f}" height="{h:.0f}" fill="#3a7d3a"/>',
    ]
    out += _pitch_svg(model)
    for r in sorted(records, key=lambda r: r.id):
        cx, cy = _svg_xy(r.x, r.y, model)
        color = COLORS.get((r.role, r.side), OTHER_COLOR)
        out.append(f'<circle class="athlete" cx="{cx:.1f}" cy="{cy:.1f}" r="8" fill="{color}" stroke="#000000" stroke-width="1"/>')
        if r.jersey is not None:
            out.append(f'<text x="{cx:.1f}" y="{cy:.1f}" class="num">{r.jersey}</text>')
    out.append(f'<text x="8" y="16" font-family="sans-serif" font-size="14" fill="#ffffff">frame {escape(str(frame))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def parse_frames(spec: Optional[str]) -> Optional[Tuple[int, Optional[int]]]:
    """'A:B' (end exclusive), 'A:' or a single frame 'N'."""
    if spec is None:
        return None
    try:
        if ":" in spec:
            a, b = spec.split(":", 1)
            return int(a) if a else 0, int(b) if b else None
        n = int(spec)
        return n, n + 1
    except ValueError:
        raise ConfigError(f"invalid frame range {spec!r}; expected A:B, A: or N") from None


def cmd_render(cfg: PipelineConfig, gamestate_path, out_dir, frames: Optional[Tuple[int, Optional[int]]] = None) -> List[Path]:
    """Write one SVG minimap per frame in the range."""
    records = F.read_gamestate(gamestate_path)
    model = cfg.pitch_model()
    by_frame = {}
    for r in records:
        by_frame.setdefault(r.frame, []).append(r)
    lo, hi = frames if frames is not None else (0, None)
    written = []
    for f in sorted(by_frame):
        if f < lo or (hi is not None and f >= hi):
            continue
        path = Path(out_dir) / f"frame_{f:06d}.svg"
        F.atomic_write_text(path, minimap_svg(by_frame[f], model, f))
        written.append(path)
    log.info("render: %d frames -> %s", len(written), out_dir)
    return written


# entry point ----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gsrecon", description="Game state reconstruction from perception outputs.")
    p.add_argument("--verbose", "-v", action="count", default=0, help="-v for progress, -vv for debug output")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, text, need_in=True, need_out=True):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", help="YAML file overriding the default configuration")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--in", dest="in_dir", required=need_in, help="input directory")
        sp.add_argument("--out", required=need_out, help="output directory")
        sp.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
        return sp

    add("synth", "simulate a clip", need_in=False).add_argument("--frames", type=int, help="number of frames to simulate")
    add("calibrate", "refine and smooth cameras")
    add("track", "raw tracking")
    add("teams", "team clusters and assignments")
    add("postprocess", "tracklet refinement to game state")
    add("run-all", "all stages, then scoring when ground truth is present")
    ev = add("eval", "score a game state", need_in=False, need_out=False)
    ev.add_argument("--gt", help="ground-truth game state file (default: IN/gt_gamestate.jsonl)")
    ev.add_argument("--pred", help="predicted game state file (default: IN/gamestate.jsonl)")
    add("render", "SVG minimaps of a game state").add_argument("--frames", help="frame range A:B (end exclusive), A: or N")
    return p


def _configure(args) -> PipelineConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = load_config(args.config, overrides)
    if args.command == "synth" and args.frames is not None:
        if args.frames < 1:
            raise ConfigError("--frames must be >= 1")
        cfg = load_config(args.config, {**overrides, "sim": {"duration": args.frames / cfg.fps}})
    return cfg


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = _configure(args)
        if args.command == "synth":
            cmd_synth(cfg, args.out)
        elif args.command == "calibrate":
            cmd_calibrate(cfg, args.in_dir, args.out)
        elif args.command == "track":
            cmd_track(cfg, args.in_dir, args.out)
        elif args.command == "teams":
            cmd_teams(cfg, args.in_dir, args.out)
        elif args.command == "postprocess":
            cmd_postprocess(cfg, args.in_dir, args.out)
        elif args.command == "run-all":
            scores = cmd_run_all(cfg, args.in_dir, args.out)
            if scores is not None:
                sys.stdout.write(format_scores(scores))
        elif args.command == "eval":
            if args.in_dir is None and (args.gt is None or args.pred is None):
                raise ConfigError("eval needs --gt and --pred, or --in")
            gt = Path(args.gt) if args.gt else Path(args.in_dir) / F.GT_GAMESTATE
            pred = Path(args.pred) if args.pred else Path(args.in_dir) / F.GAMESTATE
            sys.stdout.write(format_scores(cmd_eval(cfg, gt, pred, args.out)))
        elif args.command == "render":
            cmd_render(cfg, _find(F.GAMESTATE, args.in_dir), args.out, parse_frames(args.frames))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return EXIT_MISSING
    except SchemaError as e:
        print(f"schema violation: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except GsrError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def main() -> None:
    sys.exit(run())
