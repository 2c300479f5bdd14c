"""Pinhole camera in normalized device coordinates (NDC).

World frame: origin at the pitch centre, X along the 105 m length, Y along the
68 m width with the broadcast camera on the positive side, Z pointing down, so
a camera above the grass has a negative z.

Camera frame: x to the right of the image, y down the image, z along the
optical axis. A world point maps to NDC with

    x_ndc = I @ R @ (X - t)

where ``I = diag(f * h / w, f, 1)`` with ``f = 1 / tan(fov / 2)`` and ``R`` is
built from pan, tilt and roll. No perspective divide is applied; dividing the
first two components by the third gives coordinates in [-1, 1] across the
frame.

Points are plain ``numpy`` arrays with a trailing axis of size 3 (world / NDC)
or 2 (pixels, ground-plane positions).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import ClassVar, Optional, Sequence, Tuple

import numpy as np

from .errors import DegeneracyError, DomainError, NoIntersectionError, ProjectionError

DEFAULT_WIDTH = 1920
DEFAULT_HEIGHT = 1080
DEFAULT_ASPECT = DEFAULT_WIDTH / DEFAULT_HEIGHT

PITCH_LENGTH = 105.0
PITCH_WIDTH = 68.0

# projection / ray tests treat anything this close to zero as degenerate
_EPS = 1e-12


@dataclass(frozen=True)
class CameraParams:
    """Seven scalars describing one frame's camera.

    Position in metres, angles and vertical field of view in radians.
    """

    x: float
    y: float
    z: float
    pan: float
    tilt: float
    roll: float
    fov: float

    NAMES: ClassVar[Tuple[str, ...]] = ("x", "y", "z", "pan", "tilt", "roll", "fov")
    ANGLES: ClassVar[Tuple[str, ...]] = ("pan", "tilt", "roll", "fov")
    POSITIONS: ClassVar[Tuple[str, ...]] = ("x", "y", "z")

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not math.isfinite(v):
                raise DomainError(f"camera parameter {f.name} is not finite: {v}")
            object.__setattr__(self, f.name, v)
        if not 0.0 < self.fov < math.pi:
            raise DomainError(f"fov must lie in (0, pi), got {self.fov}")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.NAMES])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "CameraParams":
        values = [float(v) for v in values]
        if len(values) != 7:
            raise DomainError(f"expected 7 camera parameters, got {len(values)}")
        return cls(*values)

    def rotation(self) -> np.ndarray:
        return rotation_from_angles(self.pan, self.tilt, self.roll)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the world, camera, parameter and heatmap loss terms."""

    w1: float = 0.048
    w2: float = 2.49
    w3: float = 1.0
    w4: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise DomainError(f"loss weight {f.name} must be >= 0")


def intrinsics_from_fov(fov: float, width: float = DEFAULT_WIDTH, height: float = DEFAULT_HEIGHT) -> np.ndarray:
    """3x3 NDC intrinsic matrix for a vertical field of view.

    The principal point is zero. The horizontal focal term is scaled by
    ``height / width`` so both image axes span [-1, 1] after the divide.
    """
    if not (math.isfinite(fov) and 0.0 < fov < math.pi):
        raise DomainError(f"fov must lie in (0, pi), got {fov}")
    if width <= 0 or height <= 0:
        raise DomainError("frame width and height must be positive")
    f = 1.0 / math.tan(fov / 2.0)
    return np.diag([f * height / width, f, 1.0])


def _intrinsics(params: CameraParams, aspect: float) -> np.ndarray:
    return intrinsics_from_fov(params.fov, aspect, 1.0)


def rotation_from_angles(pan: float, tilt: float, roll: float) -> np.ndarray:
    """World-to-camera rotation ``R = R_roll @ R_tilt @ R_pan``.

    ``pan`` turns about the world vertical, ``tilt`` about the camera x axis
    and is measured from straight down (0 looks at the ground directly below
    the camera, pi/2 looks at the horizon), ``roll`` turns about the optical
    axis. With zero pan the camera looks towards -Y; negative pan swings the
    view towards -X.
    """
    cp, sp = math.cos(pan), math.sin(pan)
    ct, st = math.cos(tilt), math.sin(tilt)
    cr, sr = math.cos(roll), math.sin(roll)
    r_pan = np.array([[cp, sp, 0.0], [-sp, cp, 0.0], [0.0, 0.0, 1.0]])
    r_tilt = np.array([[1.0, 0.0, 0.0], [0.0, ct, st], [0.0, -st, ct]])
    r_roll = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return r_roll @ r_tilt @ r_pan


def rotations_from_angles(pan, tilt, roll) -> np.ndarray:
    """Broadcasting version of :func:`rotation_from_angles`; shape ``(..., 3, 3)``."""
    pan, tilt, roll = np.broadcast_arrays(np.asarray(pan, float), np.asarray(tilt, float), np.asarray(roll, float))
    cp, sp = np.cos(pan), np.sin(pan)
    ct, st = np.cos(tilt), np.sin(tilt)
    cr, sr = np.cos(roll), np.sin(roll)
    zero, one = np.zeros_like(pan), np.ones_like(pan)
    r_pan = np.stack([np.stack([cp, sp, zero], -1), np.stack([-sp, cp, zero], -1), np.stack([zero, zero, one], -1)], -2)
    r_tilt = np.stack([np.stack([one, zero, zero], -1), np.stack([zero, ct, st], -1), np.stack([zero, -st, ct], -1)], -2)
    r_roll = np.stack([np.stack([cr, -sr, zero], -1), np.stack([sr, cr, zero], -1), np.stack([zero, zero, one], -1)], -2)
    return r_roll @ r_tilt @ r_pan


def world_to_ndc(params: CameraParams, points, aspect: float = DEFAULT_ASPECT) -> np.ndarray:
    """Map world points ``(..., 3)`` to NDC; exact linear map, no divide."""
    points = np.asarray(points, float)
    m = _intrinsics(params, aspect) @ params.rotation()
    return (points - params.position) @ m.T


def ndc_to_world(params: CameraParams, points, aspect: float = DEFAULT_ASPECT) -> np.ndarray:
    """Inverse of :func:`world_to_ndc`: ``R.T @ inv(I) @ p + t``."""
    points = np.asarray(points, float)
    i_inv = np.diag(1.0 / np.diag(_intrinsics(params, aspect)))
    m = params.rotation().T @ i_inv
    return points @ m.T + params.position


def ndc_to_pixel(points, width: float = DEFAULT_WIDTH, height: float = DEFAULT_HEIGHT) -> np.ndarray:
    """Perspective divide and viewport transform, image y pointing down."""
    points = np.asarray(points, float)
    z = points[..., 2]
    if np.any(np.abs(z) < _EPS):
        raise ProjectionError("cannot project a point with zero depth")
    u = (points[..., 0] / z + 1.0) / 2.0 * width
    v = (points[..., 1] / z + 1.0) / 2.0 * height
    return np.stack([u, v], -1)


def world_to_pixel(params: CameraParams, points, width: float = DEFAULT_WIDTH, height: float = DEFAULT_HEIGHT) -> np.ndarray:
    return ndc_to_pixel(world_to_ndc(params, points, width / height), width, height)


def pixel_rays(params: CameraParams, pixels, width: float = DEFAULT_WIDTH, height: float = DEFAULT_HEIGHT) -> np.ndarray:
    """World-frame direction of the viewing ray through each pixel (unnormalised)."""
    pixels = np.asarray(pixels, float)
    ndc = np.stack(
        [2.0 * pixels[..., 0] / width - 1.0, 2.0 * pixels[..., 1] / height - 1.0, np.ones(pixels.shape[:-1])], -1
    )
    i_inv = np.diag(1.0 / np.diag(_intrinsics(params, width / height)))
    return ndc @ (params.rotation().T @ i_inv).T


def pixels_to_ground(params: CameraParams, pixels, width: float = DEFAULT_WIDTH, height: float = DEFAULT_HEIGHT):
    """Intersect pixel rays with the ground plane.

    Returns ``(points, valid)`` where ``points`` has shape ``(..., 2)`` and is
    NaN wherever ``valid`` is False (ray parallel to or pointing away from the
    ground).
    """
    d = pixel_rays(params, pixels, width, height)
    t = params.position
    dz = d[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = -t[2] / dz
    valid = (np.abs(dz) > _EPS) & (s > 0) & np.isfinite(s)
    s = np.where(valid, s, np.nan)
    ground = t[:2] + s[..., None] * d[..., :2]
    return ground, valid


def pixel_to_pitch(params: CameraParams, pixel, width: float = DEFAULT_WIDTH, height: float = DEFAULT_HEIGHT) -> np.ndarray:
    """Ground-plane world point ``(x, y, 0)`` seen at a single pixel."""
    ground, valid = pixels_to_ground(params, np.asarray(pixel, float)[None, :], width, height)
    if not valid[0]:
        raise NoIntersectionError(f"ray through pixel {tuple(pixel)} does not hit the ground in front of the camera")
    return np.array([ground[0, 0], ground[0, 1], 0.0])


def pixel_matrix(width: float, height: float) -> np.ndarray:
    """Homogeneous NDC -> pixel viewport matrix."""
    return np.array([[width / 2.0, 0.0, width / 2.0], [0.0, height / 2.0, height / 2.0], [0.0, 0.0, 1.0]])


def normalize_homography(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, float)
    if abs(h[2, 2]) > 1e-12:
        return h / h[2, 2]
    return h / np.linalg.norm(h)


def homography_from_params(params: CameraParams, width: float = DEFAULT_WIDTH, height: float = DEFAULT_HEIGHT) -> np.ndarray:
    """Homography taking ``(x_world, y_world, 1)`` on the ground to pixel coordinates."""
    if abs(params.z) < 1e-9:
        raise DegeneracyError("camera lies in the ground plane")
    r = params.rotation()
    basis = np.column_stack([r[:, 0], r[:, 1], -r @ params.position])
    h = pixel_matrix(width, height) @ intrinsics_from_fov(params.fov, width, height) @ basis
    return normalize_homography(h)


def apply_homography(h: np.ndarray, points) -> np.ndarray:
    points = np.asarray(points, float)
    homo = np.concatenate([points, np.ones(points.shape[:-1] + (1,))], -1) @ h.T
    return homo[..., :2] / homo[..., 2:3]


def ground_grid(steps: int = 36, length: float = PITCH_LENGTH, width: float = PITCH_WIDTH) -> np.ndarray:
    """``steps x steps`` uniform grid of ground points over the pitch rectangle, shape ``(steps**2, 3)``."""
    xs = np.linspace(-length / 2, length / 2, steps)
    ys = np.linspace(-width / 2, width / 2, steps)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])


def _loss_points(points):
    if points is None:
        points = ground_grid()
    points = np.asarray(points, float).reshape(-1, 3)
    if len(points) == 0:
        raise DomainError("loss needs a non-empty point set")
    return points


def loss_world(pred: CameraParams, gt: CameraParams, points=None, aspect: float = DEFAULT_ASPECT) -> float:
    """Sum of distances between world points and their round trip gt -> NDC -> pred^-1."""
    points = _loss_points(points)
    # back - X = (t_p - t_g) + M_p^-1 (M_g - M_p) (X - t_g), which is exactly 0 when pred == gt
    m_p = _intrinsics(pred, aspect) @ pred.rotation()
    m_g = _intrinsics(gt, aspect) @ gt.rotation()
    m_p_inv = pred.rotation().T @ np.diag(1.0 / np.diag(_intrinsics(pred, aspect)))
    resid = (pred.position - gt.position) + (points - gt.position) @ (m_p_inv @ (m_g - m_p)).T
    return float(np.linalg.norm(resid, axis=-1).sum())


def loss_camera(pred: CameraParams, gt: CameraParams, points=None, aspect: float = DEFAULT_ASPECT) -> float:
    """Sum of NDC distances between points mapped by pred and by gt."""
    points = _loss_points(points)
    diff = world_to_ndc(pred, points, aspect) - world_to_ndc(gt, points, aspect)
    return float(np.linalg.norm(diff, axis=-1).sum())


def loss_params(pred: CameraParams, gt: CameraParams) -> float:
    return float(np.abs(pred.as_array() - gt.as_array()).sum())


def _as_uv(uv) -> np.ndarray:
    arr = np.asarray(uv, float)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise DomainError(f"coordinate maps must have shape (2, H, W), got {arr.shape}")
    return arr


def loss_heatmap(pred_uv, gt_uv) -> float:
    """Sum over pixels of the L2 norm between two (U, V) coordinate maps.

    Pixels that are invalid (non-finite) in either map are skipped.
    """
    pred_uv, gt_uv = _as_uv(pred_uv), _as_uv(gt_uv)
    if pred_uv.shape != gt_uv.shape:
        raise DomainError(f"coordinate map shapes differ: {pred_uv.shape} vs {gt_uv.shape}")
    norm = np.sqrt(((pred_uv - gt_uv) ** 2).sum(0))
    return float(norm[np.isfinite(norm)].sum())


def loss_total(
    pred: CameraParams,
    gt: CameraParams,
    points=None,
    uv_pair: Optional[tuple] = None,
    weights: LossWeights = LossWeights(),
    aspect: float = DEFAULT_ASPECT,
) -> float:
    total = (
        weights.w1 * loss_world(pred, gt, points, aspect)
        + weights.w2 * loss_camera(pred, gt, points, aspect)
        + weights.w3 * loss_params(pred, gt)
    )
    if uv_pair is not None:
        total += weights.w4 * loss_heatmap(*uv_pair)
    return total


def uv_heatmaps(params: CameraParams, width: int, height: int):
    """Per-pixel world X and Y of the ground point seen at each pixel centre.

    Built from the inverse ground homography. Returns an array of shape
    ``(2, height, width)``; pixels whose ray misses the ground hold NaN.
    """
    h = homography_from_params(params, width, height)
    try:
        h_inv = np.linalg.inv(h)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("ground homography is singular") from exc
    jj, ii = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    pix = np.stack([jj, ii], -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ground = apply_homography(h_inv, pix)
    world = np.concatenate([ground, np.zeros(ground.shape[:-1] + (1,))], -1)
    depth = world_to_ndc(params, world, width / height)[..., 2]
    invalid = ~(np.isfinite(depth) & (depth > 0))
    ground[invalid] = np.nan
    return np.moveaxis(ground, -1, 0)
