"""Shared fixtures: reference cameras, palette, and small mask builders."""

from __future__ import annotations

import numpy as np
import pytest

from softbio.attributes import load_palette
from softbio.geometry import CameraCalibration
from softbio.maskops import Mask


@pytest.fixture(scope="session")
def palette():
    return load_palette()


def make_calib(
    camera_id="cam0",
    focal=(800.0, 800.0),
    principal=(320.0, 240.0),
    rotation=None,
    translation=(0.0, 0.0, 500.0),
    radial=(0.0,),
    skew=0.0,
) -> CameraCalibration:
    return CameraCalibration(
        camera_id=camera_id,
        focal=focal,
        principal=principal,
        rotation=np.eye(3) if rotation is None else rotation,
        translation=np.array(translation, dtype=float),
        radial=radial,
        skew=skew,
    )


@pytest.fixture
def simple_calib():
    """Axis-aligned camera: focal 800, principal (320, 240), t = (0, 0, 500).

    With R = I the world Z axis points along the optical axis, so the
    world X/Y plane is the camera's ground plane analog; hand-computable.
    """
    return make_calib()


def tilted_camera(tilt_rad: float, height_cm: float, focal: float = 800.0,
                  image_size=(640, 480), camera_id="tiltcam") -> CameraCalibration:
    """Surveillance-style camera above the origin looking along +Y, tilted
    down; the world ground plane is Z = 0."""
    st, ct = np.sin(tilt_rad), np.cos(tilt_rad)
    rotation = np.array([[1.0, 0.0, 0.0], [0.0, -st, -ct], [0.0, ct, -st]])
    center = np.array([0.0, 0.0, height_cm])
    w, h = image_size
    return CameraCalibration(
        camera_id=camera_id,
        focal=(focal, focal),
        principal=(w / 2.0, h / 2.0),
        rotation=rotation,
        translation=-rotation @ center,
        radial=(0.0,),
    )


def bar_mask(width=64, height=64, col=5, row_lo=10, row_hi=51, frame_id=0, detection_id="d0") -> Mask:
    """Vertical one-pixel bar occupying rows [row_lo, row_hi)."""
    bits = np.zeros((height, width), dtype=bool)
    bits[row_lo:row_hi, col] = True
    return Mask(width, height, bits, frame_id, detection_id)


def mask_from_pixels(width, height, pixels, frame_id=0, detection_id="d0") -> Mask:
    """Mask with exactly the given (col, row) pixels set."""
    bits = np.zeros((height, width), dtype=bool)
    for x, y in pixels:
        bits[y, x] = True
    return Mask(width, height, bits, frame_id, detection_id)
