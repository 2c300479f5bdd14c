import math

import numpy as np
import pytest

from gsrecon.geometry import CameraParams

# broadcast camera behind the near touchline looking at the left half
FIG_CAMERA = CameraParams(x=-12.0, y=60.0, z=-15.0, pan=-0.06, tilt=1.35, roll=0.0, fov=0.86)


def random_params(rng, n):
    """Random cameras spanning the sampled broadcast ranges."""
    out = []
    for _ in range(n):
        out.append(CameraParams(
            x=rng.uniform(-60, 60), y=rng.uniform(40, 110), z=rng.uniform(-40, -10),
            pan=rng.uniform(-math.pi, math.pi), tilt=rng.uniform(0.2, 1.5), roll=rng.uniform(-0.2, 0.2),
            fov=rng.uniform(0.4, 1.3),
        ))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fig_camera():
    return FIG_CAMERA


def render_keypoints(cam, sigma=0.0, rng=None, width=1920, height=1080):
    """In-frame model keypoints as detections, with optional pixel noise."""
    from gsrecon.calibration import DetectedKeypoint
    from gsrecon.geometry import world_to_ndc, world_to_pixel
    from gsrecon.pitch import standard_pitch

    kps = standard_pitch().keypoints
    pix = world_to_pixel(cam, kps, width, height)
    if sigma:
        pix = pix + sigma * rng.normal(size=pix.shape)
    depth = world_to_ndc(cam, kps, width / height)[:, 2]
    ok = (depth > 0) & (pix[:, 0] >= 0) & (pix[:, 0] < width) & (pix[:, 1] >= 0) & (pix[:, 1] < height)
    return [DetectedKeypoint(int(k), float(pix[k, 0]), float(pix[k, 1]), 1.0) for k in np.flatnonzero(ok)]
