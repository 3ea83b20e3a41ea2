"""Tsai camera model: projection assembly, radial undistortion, ground-plane
backprojection, and person height estimation from head/feet image points.

COORDINATE CONVENTIONS
======================
World frame (right-handed):
  - X, Y span the ground plane, Z points up; units are centimeters.
  - The ground plane is Z = 0; feet of an upright person rest on it.

Camera frame (right-handed, standard computer vision):
  - X right, Y down, Z forward along the optical axis.
  - ``rotation`` maps world directions into this frame (world -> camera);
    ``translation`` is the world origin expressed in camera coordinates,
    so a world point P projects through ``R @ P + t``.

Image frame:
  - u right, v down, origin at the top-left corner, units pixels.
  - Continuous coordinates: pixel (row r, col c) covers [c, c+1) x [r, r+1).

PROJECTION
==========
The 3x4 perspective matrix is the product of intrinsics and extrinsics::

    C = k @ [R | t],   k = [[fx, skew, cx],
                            [0,  fy,   cy],
                            [0,  0,    1 ]]

A world point (X, Y, Z) maps to the image through ``C @ (X, Y, Z, 1)``
followed by dehomogenization.  For points on the ground plane (Z = 0) the
mapping collapses to the invertible 3x3 homography ``H = [c1 c2 c4]``
(columns 1, 2 and 4 of C), which is what :func:`backproject_ground` inverts.

RADIAL DISTORTION
=================
Distortion follows the classic radial polynomial in normalized image
coordinates (pixel coordinates passed through the inverse intrinsics)::

    x_undistorted = x_distorted * (1 + k1*r^2 + k2*r^4),   r^2 = x_d^2 + y_d^2

One or two coefficients are supported.  The calibrated direction is
distorted -> undistorted (:func:`undistort`); :func:`distort` inverts the
polynomial numerically and exists for synthesizing raw observations.

HEIGHT ESTIMATION
=================
Given raw (distorted) head and feet pixels of a segmented person:

  1. undistort both points,
  2. backproject the feet to the ground plane (Z = 0),
  3. solve for the head's Z at that fixed (X, Y) by linear least squares
     over both projection equations,
  4. subtract the per-camera training bias.

Heights outside [50, 250] cm are flagged implausible but still returned;
the retrieval cascade owns the decision to drop them.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .errors import CalibrationError, GeometryError

logger = logging.getLogger(__name__)

# Heights outside this band are flagged, never silently dropped.
PLAUSIBLE_MIN_CM = 50.0
PLAUSIBLE_MAX_CM = 250.0

_ORTHONORMAL_TOL = 1e-9
_DEGENERATE_EPS = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ImagePoint:
    """A sub-pixel image location; ``distorted`` tracks whether the raw
    radial distortion is still baked in."""

    u: float
    v: float
    distorted: bool = False

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError(f"non-finite image point ({self.u}, {self.v})")


@dataclass(frozen=True)
class WorldPoint:
    """A 3D world point in centimeters; the ground plane is z = 0."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.y, self.z)):
            raise ValueError(f"non-finite world point ({self.x}, {self.y}, {self.z})")


@dataclass(frozen=True)
class CameraCalibration:
    """Intrinsics, extrinsics and radial coefficients of one camera.

    Args:
        camera_id: label used to join calibration, bias and manifest records.
        focal: (fx, fy) in pixels, both positive.
        principal: (cx, cy) in pixels.
        rotation: 3x3 orthonormal world->camera matrix, det +1.
        translation: world origin in camera coordinates, centimeters.
        radial: 1 or 2 radial distortion coefficients.
        skew: intrinsic skew term, usually 0.
    """

    camera_id: str
    focal: tuple[float, float]
    principal: tuple[float, float]
    rotation: np.ndarray
    translation: np.ndarray
    radial: tuple[float, ...] = (0.0,)
    skew: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "focal", (float(self.focal[0]), float(self.focal[1])))
        object.__setattr__(self, "principal", (float(self.principal[0]), float(self.principal[1])))
        object.__setattr__(self, "radial", tuple(float(k) for k in self.radial))
        R = _readonly(self.rotation)
        t = _readonly(self.translation).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if R.shape != (3, 3):
            raise CalibrationError(f"{self.camera_id}: rotation must be 3x3, got {R.shape}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise CalibrationError(f"{self.camera_id}: non-finite extrinsics")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > _ORTHONORMAL_TOL:
            raise CalibrationError(
                f"{self.camera_id}: rotation not orthonormal (|R^T R - I|_max = {err:.3e})"
            )
        if np.linalg.det(R) < 0:
            raise CalibrationError(
                f"{self.camera_id}: rotation is a reflection (det = -1); proper rotation required"
            )
        if self.focal[0] <= 0 or self.focal[1] <= 0:
            raise CalibrationError(f"{self.camera_id}: focal lengths must be positive, got {self.focal}")
        if len(self.radial) not in (1, 2):
            raise CalibrationError(
                f"{self.camera_id}: expected 1 or 2 radial coefficients, got {len(self.radial)}"
            )

    def intrinsic_matrix(self) -> np.ndarray:
        fx, fy = self.focal
        cx, cy = self.principal
        return np.array([[fx, self.skew, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])

    def camera_center(self) -> WorldPoint:
        """Optical center in world coordinates (solves R @ c + t = 0)."""
        c = -self.rotation.T @ self.translation
        return WorldPoint(float(c[0]), float(c[1]), float(c[2]))


@dataclass(frozen=True)
class ProjectionMatrix:
    """The 3x4 perspective matrix C = k @ [R | t] of one camera."""

    entries: np.ndarray
    source_camera: str

    def __post_init__(self):
        C = _readonly(self.entries)
        object.__setattr__(self, "entries", C)
        if C.shape != (3, 4):
            raise GeometryError(f"projection matrix must be 3x4, got {C.shape}")
        if np.linalg.matrix_rank(C) < 3:
            raise GeometryError(f"{self.source_camera}: projection matrix is rank deficient")

    def ground_homography(self) -> np.ndarray:
        """3x3 homography mapping ground points (X, Y, 1) to image points."""
        return self.entries[:, [0, 1, 3]]


@dataclass(frozen=True)
class HeightBias:
    """Training-derived height correction per camera, subtracted at test time.

    Cameras absent from the map get bias 0.
    """

    bias_cm: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        clean = {str(k): float(v) for k, v in self.bias_cm.items()}
        for cam, b in clean.items():
            if not math.isfinite(b):
                raise ValueError(f"non-finite bias for camera {cam}")
        object.__setattr__(self, "bias_cm", MappingProxyType(clean))

    def for_camera(self, camera_id: str) -> float:
        return self.bias_cm.get(camera_id, 0.0)


@dataclass(frozen=True)
class HeightEstimate:
    """Bias-corrected height of one detection; ``implausible`` marks values
    outside [PLAUSIBLE_MIN_CM, PLAUSIBLE_MAX_CM]."""

    height_cm: float
    implausible: bool
    camera_id: str


def build_projection(calib: CameraCalibration) -> ProjectionMatrix:
    """Assemble C = k @ [R | t] from a validated calibration."""
    rt = np.hstack([calib.rotation, calib.translation.reshape(3, 1)])
    return ProjectionMatrix(entries=calib.intrinsic_matrix() @ rt, source_camera=calib.camera_id)


def _normalized(p: ImagePoint, calib: CameraCalibration) -> tuple[float, float]:
    """Pixel -> normalized image coordinates (inverse intrinsics)."""
    fx, fy = calib.focal
    cx, cy = calib.principal
    y = (p.v - cy) / fy
    x = (p.u - cx - calib.skew * y) / fx
    return x, y


def _denormalized(x: float, y: float, calib: CameraCalibration, distorted: bool) -> ImagePoint:
    fx, fy = calib.focal
    cx, cy = calib.principal
    return ImagePoint(fx * x + calib.skew * y + cx, fy * y + cy, distorted=distorted)


def _radial_factor(r2: float, radial: tuple[float, ...]) -> float:
    f = 1.0 + radial[0] * r2
    if len(radial) == 2:
        f += radial[1] * r2 * r2
    return f


def undistort(p: ImagePoint, calib: CameraCalibration) -> ImagePoint:
    """Remove radial distortion: x_u = x_d * (1 + k1*r^2 + k2*r^4) in
    normalized coordinates.

    Requires ``p.distorted``; with all-zero coefficients the point is
    returned bit-identical (only the flag flips).
    """
    if not p.distorted:
        raise ValueError("undistort expects a distorted point")
    if all(k == 0.0 for k in calib.radial):
        return ImagePoint(p.u, p.v, distorted=False)
    x, y = _normalized(p, calib)
    f = _radial_factor(x * x + y * y, calib.radial)
    return _denormalized(x * f, y * f, calib, distorted=False)


def distort(p: ImagePoint, calib: CameraCalibration, max_iter: int = 60, tol: float = 1e-14) -> ImagePoint:
    """Apply radial distortion (numerical inverse of :func:`undistort`).

    Solves r_u = r_d * (1 + k1*r_d^2 + k2*r_d^4) for r_d by Newton iteration
    on the normalized radius.  Used when synthesizing raw observations from
    exact world geometry.
    """
    if p.distorted:
        raise ValueError("distort expects an undistorted point")
    if all(k == 0.0 for k in calib.radial):
        return ImagePoint(p.u, p.v, distorted=True)
    xu, yu = _normalized(p, calib)
    ru = math.hypot(xu, yu)
    if ru == 0.0:
        return ImagePoint(p.u, p.v, distorted=True)
    k1 = calib.radial[0]
    k2 = calib.radial[1] if len(calib.radial) == 2 else 0.0
    rd = ru
    for _ in range(max_iter):
        g = rd * (1.0 + k1 * rd * rd + k2 * rd**4) - ru
        dg = 1.0 + 3.0 * k1 * rd * rd + 5.0 * k2 * rd**4
        if abs(dg) < _DEGENERATE_EPS:
            raise GeometryError("distortion polynomial not invertible at this radius")
        step = g / dg
        rd -= step
        if abs(step) < tol:
            break
    scale = rd / ru
    return _denormalized(xu * scale, yu * scale, calib, distorted=True)


def project(w: WorldPoint, C: ProjectionMatrix) -> ImagePoint:
    """Dehomogenized image of a world point; raises on the principal plane."""
    x = C.entries @ np.array([w.x, w.y, w.z, 1.0])
    if abs(x[2]) <= _DEGENERATE_EPS:
        raise GeometryError(
            f"{C.source_camera}: degenerate projection, point on principal plane (w = {x[2]:.3e})"
        )
    return ImagePoint(float(x[0] / x[2]), float(x[1] / x[2]), distorted=False)


def backproject_ground(p: ImagePoint, C: ProjectionMatrix) -> WorldPoint:
    """Invert the ground-plane homography: image point -> (X, Y, 0)."""
    if p.distorted:
        raise ValueError("backproject_ground expects an undistorted point")
    H = C.ground_homography()
    det = np.linalg.det(H)
    if abs(det) <= _DEGENERATE_EPS:
        raise GeometryError(f"{C.source_camera}: degenerate ground view (|det H| = {abs(det):.3e})")
    xyw = np.linalg.solve(H, np.array([p.u, p.v, 1.0]))
    if abs(xyw[2]) <= _DEGENERATE_EPS:
        raise GeometryError(f"{C.source_camera}: image point maps to the ground line at infinity")
    return WorldPoint(float(xyw[0] / xyw[2]), float(xyw[1] / xyw[2]), 0.0)


def _head_equations(ground_xy: WorldPoint, head: ImagePoint, C: ProjectionMatrix):
    """Coefficients of the two linear equations a*Z = b obtained by
    cross-multiplying u = num_u(Z)/den(Z) and v = num_v(Z)/den(Z)."""
    c = C.entries
    X, Y = ground_xy.x, ground_xy.y
    u, v = head.u, head.v
    den0 = c[2, 0] * X + c[2, 1] * Y + c[2, 3]
    a = np.array([u * c[2, 2] - c[0, 2], v * c[2, 2] - c[1, 2]])
    b = np.array(
        [
            (c[0, 0] * X + c[0, 1] * Y + c[0, 3]) - u * den0,
            (c[1, 0] * X + c[1, 1] * Y + c[1, 3]) - v * den0,
        ]
    )
    return a, b


def solve_head_height(ground_xy: WorldPoint, head: ImagePoint, C: ProjectionMatrix) -> float:
    """Least-squares Z of the head ray above a fixed ground position.

    Both projection equations are cross-multiplied into linear form
    a_i * Z = b_i and solved jointly: Z = (a.b) / (a.a).  Negative values
    are returned as-is; the caller interprets them.
    """
    if head.distorted:
        raise ValueError("solve_head_height expects an undistorted head point")
    if abs(ground_xy.z) > 1e-9:
        raise ValueError(f"ground point must satisfy z = 0, got z = {ground_xy.z}")
    a, b = _head_equations(ground_xy, head, C)
    norm2 = float(a @ a)
    if math.sqrt(norm2) <= _DEGENERATE_EPS:
        raise GeometryError(f"{C.source_camera}: height unobservable, both equations degenerate in Z")
    return float(a @ b) / norm2


def head_height_residual(ground_xy: WorldPoint, head: ImagePoint, C: ProjectionMatrix, z: float) -> float:
    """Norm of the cross-multiplied projection residual at height ``z``;
    :func:`solve_head_height` minimizes exactly this quantity."""
    a, b = _head_equations(ground_xy, head, C)
    return float(np.hypot(a[0] * z - b[0], a[1] * z - b[1]))


def estimate_height(
    calib: CameraCalibration,
    head_raw: ImagePoint,
    feet_raw: ImagePoint,
    bias: HeightBias,
) -> HeightEstimate:
    """Full height pipeline for one detection.

    Undistorts both raw points (points already flagged undistorted pass
    through), backprojects the feet to the ground plane, solves the head's
    Z there, and subtracts the per-camera bias.  Implausible corrected
    heights (outside [50, 250] cm) are flagged and logged, not dropped.
    """
    C = build_projection(calib)
    head = undistort(head_raw, calib) if head_raw.distorted else head_raw
    feet = undistort(feet_raw, calib) if feet_raw.distorted else feet_raw
    ground = backproject_ground(feet, C)
    z = solve_head_height(ground, head, C)
    corrected = z - bias.for_camera(calib.camera_id)
    implausible = not (PLAUSIBLE_MIN_CM <= corrected <= PLAUSIBLE_MAX_CM)
    if implausible:
        logger.warning(
            "camera %s: implausible height %.1f cm (flagged, kept for the cascade)",
            calib.camera_id,
            corrected,
        )
    return HeightEstimate(height_cm=corrected, implausible=implausible, camera_id=calib.camera_id)


def compute_bias(training_pairs: Mapping[str, Sequence[tuple[float, float]]]) -> HeightBias:
    """Per-camera mean(estimated) - mean(annotated) over training pairs.

    Cameras absent from the map default to bias 0 at lookup time; an empty
    map yields an all-default bias.
    """
    out: dict[str, float] = {}
    for camera_id, pairs in training_pairs.items():
        if not pairs:
            raise ValueError(f"camera {camera_id}: at least one training pair required")
        est = [float(e) for e, _ in pairs]
        ann = [float(a) for _, a in pairs]
        out[camera_id] = sum(est) / len(est) - sum(ann) / len(ann)
    return HeightBias(out)
