"""Pipeline configuration: the shipped YAML defaults overlaid with a user file."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from .calibration import RefinementConfig, SmootherConfig
from .errors import ConfigError, GsrError
from .pitch import PitchModel, standard_pitch
from .postprocess import MergeConfig
from .synthetic import SimConfig
from .teams import TeamConfig
from .tracking import TrackerConfig


def default_tree() -> Dict[str, Any]:
    text = resources.files("gsrecon").joinpath("default_config.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def _overlay(base: Dict[str, Any], user: Dict[str, Any], path: str = "") -> Dict[str, Any]:
    """Recursive update that rejects keys absent from ``base``."""
    out = copy.deepcopy(base)
    for key, value in user.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _overlay(base[key], value, where + ".")
        else:
            out[key] = value
    return out


@dataclass
class EvalConfig:
    tau: float = 5.0
    exclude_roles: Tuple[str, ...] = ("other",)

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("eval.tau must be positive")
        self.exclude_roles = tuple(self.exclude_roles)


@dataclass
class PipelineConfig:
    seed: int = 0
    fps: float = 30.0
    width: int = 1920
    height: int = 1080
    workers: int = 1
    pitch: Optional[str] = None
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    teams: TeamConfig = field(default_factory=TeamConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def pitch_model(self) -> PitchModel:
        return standard_pitch() if self.pitch is None else PitchModel.load(self.pitch)

    @classmethod
    def from_tree(cls, tree: Dict[str, Any]) -> "PipelineConfig":
        """Build from a full tree; shared keys (seed, fps, size) are copied into the sections."""
        t = copy.deepcopy(tree)
        try:
            top = dict(seed=int(t["seed"]), fps=float(t["fps"]), width=int(t["width"]), height=int(t["height"]))
            if top["fps"] <= 0 or top["width"] < 1 or top["height"] < 1:
                raise ConfigError("fps, width and height must be positive")
            if int(t["workers"]) < 1:
                raise ConfigError("workers must be >= 1")
            ref = t["refinement"]
            ref["scales"] = tuple(ref["scales"])
            ref["polish_steps"] = tuple(ref["polish_steps"])
            return cls(
                workers=int(t["workers"]), pitch=t["pitch"], **top,
                refinement=RefinementConfig(**ref),
                smoother=SmootherConfig(**t["smoother"]),
                tracker=TrackerConfig(fps=top["fps"], **t["tracker"]),
                teams=TeamConfig(**t["teams"]),
                merge=MergeConfig(fps=top["fps"], **t["merge"]),
                sim=SimConfig(seed=top["seed"], fps=top["fps"], width=top["width"], height=top["height"], **t["sim"]),
                eval=EvalConfig(**t["eval"]),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, GsrError) as e:
            raise ConfigError(f"invalid config value: {e}") from None


def load_config(path=None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Defaults, then the YAML file at ``path``, then ``overrides`` (same tree shape)."""
    tree = default_tree()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            user = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        tree = _overlay(tree, user)
    if overrides:
        tree = _overlay(tree, overrides)
    return PipelineConfig.from_tree(tree)
