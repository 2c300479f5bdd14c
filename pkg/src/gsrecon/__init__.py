"""Game state reconstruction: pitch positions, roles, teams and jersey numbers from broadcast perception outputs."""
from .errors import (
    ConfigError,
    DegeneracyError,
    DomainError,
    GsrError,
    InsufficientDataError,
    NoIntersectionError,
    ProjectionError,
    SchemaError,
    UnresolvedError,
)
from .geometry import CameraParams
from .pitch import PitchModel, standard_pitch

__version__ = "0.1.0"

__all__ = [
    "CameraParams",
    "ConfigError",
    "DegeneracyError",
    "DomainError",
    "GsrError",
    "InsufficientDataError",
    "NoIntersectionError",
    "PitchModel",
    "ProjectionError",
    "SchemaError",
    "UnresolvedError",
    "standard_pitch",
    "__version__",
]
