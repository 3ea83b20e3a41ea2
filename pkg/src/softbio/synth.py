"""Synthetic-scene oracle: cameras, billboard persons of exactly known
height/colors/gender, rasterized masks and frames, and marker ground truth.

Persons are modeled as flat world-space rectangles ("billboards") standing
on the ground plane, oriented perpendicular to the camera's ground-projected
view ray.  A billboard point is addressed by lateral offset ``s`` (cm, zero
at the feet center) and height ``z`` (cm above ground).  The silhouette is::

      z in [0.8h, h]   : head band, width 0.3 * body width, skin colored
      z in [0.5h, 0.8h): torso band, full width, torso color
      z in [0,    0.5h): leg band,  full width, leg color

so the 20%/50% proportions of the body split hold exactly in world height
and the color bands have hard edges (no anti-aliasing).  Rasterization maps
every candidate pixel center back through the exact camera (undistortion
followed by the inverse of the plane-induced homography), which keeps the
rendered mask within one pixel of the analytic silhouette.

Markers sit at exact world positions (head top center, band corners) and
are projected through the same camera, into distorted coordinates when the
camera has radial distortion, like hand annotations on raw frames would be.

All randomness (envelope camera sampling, point perturbation) flows from
explicit seeds; identical (spec, seed) produce byte-identical bundles.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .attributes import GENDERS, AttributeScores, CultureColorPalette, load_palette
from .dataio import (
    DetectionRecord,
    DetectionsManifest,
    FrameRecord,
    calibration_from_dict,
    write_calibration,
    write_image,
    write_manifest,
    write_markers,
    _atomic_write_text,
)
from .errors import BundleError, SceneError
from .geometry import CameraCalibration, ImagePoint, ProjectionMatrix, build_projection, distort
from .maskops import Mask
from .metrics import Box, MarkerSet, gt_bbox

logger = logging.getLogger(__name__)

HEAD_TOP_FRACTION = 0.8        # z above this fraction of height belongs to the head band
TORSO_TOP_FRACTION = 0.5       # z above this fraction (and below head) is torso
HEAD_WIDTH_RATIO = 0.3         # head band width relative to body width
NECK_HEIGHT_FRACTION = 0.85
# The legs narrow as a wedge from full width at the hips to a small flat
# tip at the feet, and the head tapers to the same tip width at the top.
# The tips keep the topmost/bottommost mask rows centered on the true
# head/feet points (within a pixel), and the widest silhouette corners
# coincide with the waist/shoulder markers, for any camera in the
# envelope; full-width horizontal edges at the extremities would slant
# under perspective and break both properties for off-axis persons.
HEAD_TAPER_FRACTION = 0.9      # head taper spans z in [0.9h, h]
# Tips target this image width so the extreme mask rows carry 2-3 centered
# pixels: wide tips pick up perspective slant, sub-pixel tips leave the
# row centroid at the mercy of the pixel grid.
TIP_TARGET_PX = 2.5
MAX_TIP_WIDTH_RATIO = 0.12     # tip half-width cap relative to body half-width

SKIN_SRGB = (205, 170, 125)
BACKGROUND_SRGB = (70, 70, 70)

PERSON_HEIGHT_RANGE_CM = (140.0, 200.0)
DEFAULT_BODY_WIDTH_CM = 50.0

_VISIBILITY_MARGIN_PX = 1.0


@dataclass(frozen=True)
class CameraEnvelope:
    """Sampling ranges for random scene cameras."""

    height_cm: tuple[float, float] = (250.0, 600.0)
    tilt_deg: tuple[float, float] = (0.0, 45.0)
    focal_px: tuple[float, float] = (400.0, 1200.0)


@dataclass(frozen=True)
class PersonSpec:
    subject_id: str
    height_cm: float
    position: tuple[float, float]
    torso_color: str
    leg_color: str
    gender: str
    width_cm: float = DEFAULT_BODY_WIDTH_CM

    def __post_init__(self):
        lo, hi = PERSON_HEIGHT_RANGE_CM
        if not lo <= self.height_cm <= hi:
            raise SceneError(
                f"person {self.subject_id}: height {self.height_cm} cm outside [{lo}, {hi}]"
            )
        if self.width_cm <= 0:
            raise SceneError(f"person {self.subject_id}: width must be positive")
        if self.gender not in GENDERS:
            raise SceneError(f"person {self.subject_id}: unknown gender {self.gender!r}")


@dataclass(frozen=True)
class FrameSpec:
    frame_id: int
    persons: tuple[PersonSpec, ...]


@dataclass(frozen=True)
class SceneSpec:
    """A renderable scene: camera (explicit or envelope-sampled), persons
    per frame, image size, head/feet noise level, and a mandatory seed."""

    image_size: tuple[int, int]
    seed: int
    frames: tuple[FrameSpec, ...]
    camera: Optional[CameraCalibration] = None
    envelope: CameraEnvelope = field(default_factory=CameraEnvelope)
    noise_sigma_px: float = 0.0

    def __post_init__(self):
        w, h = self.image_size
        if w < 16 or h < 16:
            raise SceneError(f"image size {self.image_size} too small")
        if self.noise_sigma_px < 0:
            raise SceneError("noise sigma must be >= 0")
        ids = [f.frame_id for f in self.frames]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise SceneError("frame_ids must be strictly increasing")


@dataclass(frozen=True)
class PersonTruth:
    """Exact ground truth for one rendered person in one frame."""

    subject_id: str
    detection_id: str
    height_cm: float
    torso_color: str
    leg_color: str
    gender: str
    markers: MarkerSet
    gt_box: Box
    head: tuple[float, float]
    feet: tuple[float, float]


@dataclass(frozen=True)
class SceneRender:
    """One rendered frame: image, per-person masks, manifest fragment, truth."""

    frame: np.ndarray
    masks: tuple[Mask, ...]
    record: FrameRecord
    truths: tuple[PersonTruth, ...]


def parse_scene_spec(source: str | Path | Mapping, palette: CultureColorPalette) -> SceneSpec:
    """Load a scene spec file; person colors are validated against the palette."""
    if isinstance(source, Mapping):
        data = dict(source)
        where = "scene spec"
    else:
        path = Path(source)
        where = str(path)
        try:
            data = json.loads(path.read_text("utf-8"))
        except FileNotFoundError as exc:
            raise SceneError(f"scene spec not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise SceneError(f"{path}: invalid JSON: {exc}") from exc
    if "seed" not in data:
        raise SceneError(f"{where}: seed is mandatory")
    try:
        seed = int(data["seed"])
        image_size = (int(data["image_size"][0]), int(data["image_size"][1]))
        noise = float(data.get("noise_sigma_px", 0.0))
        raw_frames = data["frames"]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise SceneError(f"{where}: malformed scene spec: {exc}") from exc

    camera = None
    cam_field = data.get("camera", "random")
    if cam_field != "random":
        if not isinstance(cam_field, Mapping):
            raise SceneError(f"{where}: camera must be a calibration object or \"random\"")
        try:
            camera = calibration_from_dict(cam_field, where)
        except BundleError as exc:
            raise SceneError(str(exc)) from exc
    envelope = CameraEnvelope()
    if "envelope" in data:
        env = data["envelope"]
        try:
            envelope = CameraEnvelope(
                height_cm=tuple(float(x) for x in env.get("height_cm", envelope.height_cm)),
                tilt_deg=tuple(float(x) for x in env.get("tilt_deg", envelope.tilt_deg)),
                focal_px=tuple(float(x) for x in env.get("focal_px", envelope.focal_px)),
            )
        except (TypeError, ValueError) as exc:
            raise SceneError(f"{where}: malformed envelope: {exc}") from exc

    frames = []
    for fi, fr in enumerate(raw_frames):
        try:
            frame_id = int(fr["frame_id"])
            raw_persons = fr.get("persons", [])
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"{where}: frame #{fi}: {exc}") from exc
        persons = []
        for pi, p in enumerate(raw_persons):
            try:
                person = PersonSpec(
                    subject_id=str(p.get("subject_id", f"s{pi}")),
                    height_cm=float(p["height_cm"]),
                    position=(float(p["position"][0]), float(p["position"][1])),
                    torso_color=str(p["torso_color"]),
                    leg_color=str(p["leg_color"]),
                    gender=str(p["gender"]),
                    width_cm=float(p.get("width_cm", DEFAULT_BODY_WIDTH_CM)),
                )
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                raise SceneError(f"{where}: frame {frame_id} person #{pi}: {exc}") from exc
            for label, color in (("torso_color", person.torso_color), ("leg_color", person.leg_color)):
                if color not in palette:
                    raise SceneError(
                        f"{where}: frame {frame_id} person {person.subject_id}: "
                        f"{label} {color!r} not in palette"
                    )
            persons.append(person)
        frames.append(FrameSpec(frame_id=frame_id, persons=tuple(persons)))
    return SceneSpec(
        image_size=image_size,
        seed=seed,
        frames=tuple(frames),
        camera=camera,
        envelope=envelope,
        noise_sigma_px=noise,
    )


def sample_envelope_camera(
    rng: np.random.Generator,
    image_size: tuple[int, int],
    envelope: CameraEnvelope = CameraEnvelope(),
    camera_id: str = "synthcam",
) -> CameraCalibration:
    """Draw a surveillance-style camera: above the origin at a sampled
    height, looking along +Y with a sampled downward tilt and focal length.

    Draw order (height, tilt, focal) is part of the reproducibility
    contract.
    """
    height = rng.uniform(*envelope.height_cm)
    tilt = np.deg2rad(rng.uniform(*envelope.tilt_deg))
    focal = rng.uniform(*envelope.focal_px)
    st, ct = np.sin(tilt), np.cos(tilt)
    # rows are the camera axes in world coordinates: x right, y image-down, z forward
    rotation = np.array([[1.0, 0.0, 0.0], [0.0, -st, -ct], [0.0, ct, -st]])
    center = np.array([0.0, 0.0, height])
    w, h = image_size
    return CameraCalibration(
        camera_id=camera_id,
        focal=(focal, focal),
        principal=(w / 2.0, h / 2.0),
        rotation=rotation,
        translation=-rotation @ center,
        radial=(0.0,),
    )


# ---------------------------------------------------------------------------
# billboard geometry

def _billboard_axes(calib: CameraCalibration, position: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    """Foot center F and lateral unit axis A (ground plane, perpendicular to
    the camera->person ground ray)."""
    foot = np.array([position[0], position[1], 0.0])
    center = -calib.rotation.T @ calib.translation
    d = foot[:2] - center[:2]
    norm = np.linalg.norm(d)
    if norm < 1e-9:
        raise SceneError("person stands directly under the camera; billboard orientation undefined")
    d /= norm
    lateral = np.array([-d[1], d[0], 0.0])
    return foot, lateral


def _billboard_point(foot: np.ndarray, lateral: np.ndarray, s: float, z: float) -> np.ndarray:
    return foot + s * lateral + np.array([0.0, 0.0, z])


def _project_raw(calib: CameraCalibration, C: ProjectionMatrix, p: np.ndarray) -> tuple[ImagePoint, float]:
    """Project a world point into raw (distorted when applicable) pixel
    coordinates; also returns the camera-frame depth."""
    x = C.entries @ np.append(p, 1.0)
    depth = float(x[2])
    ideal = ImagePoint(float(x[0] / x[2]), float(x[1] / x[2]), distorted=False)
    if any(k != 0.0 for k in calib.radial):
        return distort(ideal, calib), depth
    return ImagePoint(ideal.u, ideal.v, distorted=True), depth


def _tip_half_width(
    calib: CameraCalibration, C: ProjectionMatrix, foot: np.ndarray, lateral: np.ndarray,
    person: PersonSpec,
) -> float:
    """Tip half-width (cm) that renders close to TIP_TARGET_PX pixels wide
    for this camera/person pairing."""
    p0, _ = _project_raw(calib, C, foot)
    p1, _ = _project_raw(calib, C, foot + lateral)
    px_per_cm = max(float(np.hypot(p1.u - p0.u, p1.v - p0.v)), 1e-9)
    hw = person.width_cm / 2.0
    return float(np.clip(TIP_TARGET_PX / 2.0 / px_per_cm, 0.0, MAX_TIP_WIDTH_RATIO * hw))


def _half_width_profile(z: np.ndarray, person: PersonSpec, tip_hw: float) -> np.ndarray:
    """Silhouette half-width at world height z.

    Legs (z < 0.5h) form a wedge from a small tip at the feet to full width
    at the hips; the torso band (0.5h..0.8h) is full width; the head band
    is narrower and tapers to the tip width over its top half.
    """
    hw = person.width_cm / 2.0
    hh = person.height_cm
    head_hw = hw * HEAD_WIDTH_RATIO
    hips = TORSO_TOP_FRACTION * hh
    taper_start = HEAD_TAPER_FRACTION * hh
    base = np.where(z >= HEAD_TOP_FRACTION * hh, head_hw, hw)
    base = np.where(z < hips, tip_hw + (hw - tip_hw) * z / hips, base)
    base = np.where(
        z > taper_start,
        head_hw + (tip_hw - head_hw) * (z - taper_start) / (hh - taper_start),
        base,
    )
    return base


def _silhouette_corners(person: PersonSpec, tip_hw: float) -> list[tuple[float, float]]:
    """(s, z) profile vertices; their projections bound the silhouette."""
    hw = person.width_cm / 2.0
    hh = person.height_cm
    head_hw = hw * HEAD_WIDTH_RATIO
    corners = []
    for s, z in (
        (tip_hw, 0.0),
        (hw, TORSO_TOP_FRACTION * hh),
        (hw, HEAD_TOP_FRACTION * hh),
        (head_hw, HEAD_TOP_FRACTION * hh),
        (head_hw, HEAD_TAPER_FRACTION * hh),
        (tip_hw, hh),
    ):
        corners.append((-s, z))
        corners.append((s, z))
    return corners


def person_in_frustum(
    calib: CameraCalibration,
    image_size: tuple[int, int],
    person: PersonSpec,
    margin: float = _VISIBILITY_MARGIN_PX,
) -> bool:
    """True when every silhouette corner projects inside the image with
    positive depth."""
    C = build_projection(calib)
    foot, lateral = _billboard_axes(calib, person.position)
    tip_hw = _tip_half_width(calib, C, foot, lateral, person)
    w, h = image_size
    for s, z in _silhouette_corners(person, tip_hw):
        pt, depth = _project_raw(calib, C, _billboard_point(foot, lateral, s, z))
        if depth <= 0:
            return False
        if not (margin <= pt.u <= w - margin and margin <= pt.v <= h - margin):
            return False
    return True


def person_markers(
    calib: CameraCalibration,
    person: PersonSpec,
    frame_id: int,
) -> MarkerSet:
    """Project the nine marker positions of a billboard person.

    Shoulders/waists/toes sit at the wide-band corners and head_top at the
    top center, so the marker-derived ground-truth box brackets the
    rendered silhouette.
    """
    C = build_projection(calib)
    foot, lateral = _billboard_axes(calib, person.position)
    hw = person.width_cm / 2.0
    hh = person.height_cm
    head_hw = hw * HEAD_WIDTH_RATIO

    def at(s: float, z: float) -> tuple[float, float]:
        pt, _ = _project_raw(calib, C, _billboard_point(foot, lateral, s, z))
        return (pt.u, pt.v)

    return MarkerSet(
        frame_id=frame_id,
        subject_id=person.subject_id,
        head_top=at(0.0, hh),
        neck_left=at(-head_hw, NECK_HEIGHT_FRACTION * hh),
        neck_right=at(head_hw, NECK_HEIGHT_FRACTION * hh),
        shoulder_left=at(-hw, HEAD_TOP_FRACTION * hh),
        shoulder_right=at(hw, HEAD_TOP_FRACTION * hh),
        waist_left=at(-hw, TORSO_TOP_FRACTION * hh),
        waist_right=at(hw, TORSO_TOP_FRACTION * hh),
        toe_left=at(-hw, 0.0),
        toe_right=at(hw, 0.0),
    )


def _rasterize_person(
    calib: CameraCalibration,
    C: ProjectionMatrix,
    person: PersonSpec,
    image_size: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Boolean occupancy grid and per-pixel world height for one person.

    Pixel centers are mapped back through the camera: undistort, then apply
    the inverse of the billboard-plane homography to recover (s, z).  The
    lateral extent follows the world-space width profile; the top and
    bottom are cut along horizontal image lines through the projected
    head-top and feet points (a z-cut would slant across pixel rows under
    perspective and de-center the extreme rows that head/feet extraction
    relies on).
    """
    w, h = image_size
    foot, lateral = _billboard_axes(calib, person.position)
    tip_hw = _tip_half_width(calib, C, foot, lateral, person)
    up = np.array([0.0, 0.0, 1.0])
    M = np.column_stack(
        [C.entries[:, :3] @ lateral, C.entries[:, :3] @ up, C.entries[:, :3] @ foot + C.entries[:, 3]]
    )
    if abs(np.linalg.det(M)) <= 1e-12:
        raise SceneError(f"person {person.subject_id}: billboard plane degenerate for this camera")
    Minv = np.linalg.inv(M)

    distorted = any(k != 0.0 for k in calib.radial)
    if distorted:
        x0, y0, x1, y1 = 0, 0, w, h  # bands shift under distortion; scan everything
    else:
        corners = [
            _project_raw(calib, C, _billboard_point(foot, lateral, s, z))[0]
            for s, z in _silhouette_corners(person, tip_hw)
        ]
        us = [c.u for c in corners]
        vs = [c.v for c in corners]
        x0 = max(0, int(np.floor(min(us))) - 2)
        x1 = min(w, int(np.ceil(max(us))) + 2)
        y0 = max(0, int(np.floor(min(vs))) - 2)
        y1 = min(h, int(np.ceil(max(vs))) + 2)

    cols, rows = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
    u = cols + 0.5
    v = rows + 0.5
    fx, fy = calib.focal
    cx, cy = calib.principal
    yn = (v - cy) / fy
    xn = (u - cx - calib.skew * yn) / fx
    if distorted:
        r2 = xn * xn + yn * yn
        factor = 1.0 + calib.radial[0] * r2
        if len(calib.radial) == 2:
            factor = factor + calib.radial[1] * r2 * r2
        xn, yn = xn * factor, yn * factor
    ui = fx * xn + calib.skew * yn + cx
    vi = fy * yn + cy

    # third row of Minv @ [u, v, 1] equals 1/depth: positive depth only,
    # otherwise pixels beyond the plane's vanishing line alias into range
    denom = Minv[2, 0] * ui + Minv[2, 1] * vi + Minv[2, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (Minv[0, 0] * ui + Minv[0, 1] * vi + Minv[0, 2]) / denom
        z = (Minv[1, 0] * ui + Minv[1, 1] * vi + Minv[1, 2]) / denom
    hh = person.height_cm
    head_pt, _ = _project_raw(calib, C, _billboard_point(foot, lateral, 0.0, hh))
    feet_pt, _ = _project_raw(calib, C, foot)
    inside = (
        (denom > 0)
        & np.isfinite(s)
        & np.isfinite(z)
        & (v >= head_pt.v)
        & (v <= feet_pt.v)
        & (np.abs(s) <= _half_width_profile(np.clip(z, 0.0, hh), person, tip_hw))
    )

    bits = np.zeros((h, w), dtype=bool)
    height_map = np.zeros((h, w), dtype=np.float64)
    bits[y0:y1, x0:x1] = inside
    height_map[y0:y1, x0:x1] = np.where(inside, z, 0.0)
    return bits, height_map


def generate_scene(
    calib: CameraCalibration,
    frame_spec: FrameSpec,
    image_size: tuple[int, int],
    palette: CultureColorPalette,
) -> SceneRender:
    """Render one frame: background plus every person's color bands, with
    per-person masks and exact truth.

    Rendering is deterministic; raises when any person leaves the frustum.
    Overlapping persons paint nearest-last (masks stay full silhouettes).
    """
    w, h = image_size
    C = build_projection(calib)
    frame = np.empty((h, w, 3), dtype=np.uint8)
    frame[:, :] = BACKGROUND_SRGB

    rendered = []
    for person in frame_spec.persons:
        if not person_in_frustum(calib, image_size, person):
            raise SceneError(
                f"frame {frame_spec.frame_id}: person {person.subject_id} outside camera frustum"
            )
        bits, height_map = _rasterize_person(calib, C, person, image_size)
        foot = np.array([person.position[0], person.position[1], 0.0])
        depth = float(C.entries[2] @ np.append(foot, 1.0))
        rendered.append((depth, person, bits, height_map))

    # painter's order: farthest first, nearest overwrites
    masks = []
    truths = []
    detections = []
    for depth, person, bits, height_map in sorted(rendered, key=lambda item: -item[0]):
        hh = person.height_cm
        torso = bits & (height_map >= TORSO_TOP_FRACTION * hh) & (height_map < HEAD_TOP_FRACTION * hh)
        legs = bits & (height_map < TORSO_TOP_FRACTION * hh)
        head = bits & (height_map >= HEAD_TOP_FRACTION * hh)
        frame[legs] = palette.srgb_of(person.leg_color)
        frame[torso] = palette.srgb_of(person.torso_color)
        frame[head] = SKIN_SRGB

    # manifest order follows the frame spec, not paint order
    for idx, person in enumerate(frame_spec.persons):
        bits = next(r[2] for r in rendered if r[1] is person)
        detection_id = f"d{idx}"
        mask = Mask(w, h, bits, frame_id=frame_spec.frame_id, detection_id=detection_id)
        masks.append(mask)
        markers = person_markers(calib, person, frame_spec.frame_id)
        foot, lateral = _billboard_axes(calib, person.position)
        head_pt, _ = _project_raw(calib, C, _billboard_point(foot, lateral, 0.0, person.height_cm))
        feet_pt, _ = _project_raw(calib, C, foot)
        truths.append(
            PersonTruth(
                subject_id=person.subject_id,
                detection_id=detection_id,
                height_cm=person.height_cm,
                torso_color=person.torso_color,
                leg_color=person.leg_color,
                gender=person.gender,
                markers=markers,
                gt_box=gt_bbox(markers),
                head=(head_pt.u, head_pt.v),
                feet=(feet_pt.u, feet_pt.v),
            )
        )
        gender_scores = {g: (1.0 if g == person.gender else 0.0) for g in GENDERS}
        detections.append(
            DetectionRecord(
                detection_id=detection_id,
                mask_ref=f"masks/f{frame_spec.frame_id:06d}_{detection_id}.png",
                scores=AttributeScores(gender_scores=gender_scores, provenance="external"),
            )
        )

    record = FrameRecord(
        frame_id=frame_spec.frame_id,
        camera_id=calib.camera_id,
        frame_image_path=f"frames/f{frame_spec.frame_id:06d}.png",
        detections=tuple(detections),
    )
    return SceneRender(frame=frame, masks=tuple(masks), record=record, truths=tuple(truths))


@dataclass(frozen=True)
class BundleTruth:
    """What :func:`generate_bundle` knows exactly about its output."""

    camera: CameraCalibration
    truths: Mapping[int, tuple[PersonTruth, ...]]  # frame_id -> per-person truth


def generate_bundle(
    spec: SceneSpec,
    out_dir: str | Path,
    palette: Optional[CultureColorPalette] = None,
) -> BundleTruth:
    """Render every frame of a scene spec into a standard bundle directory
    (cameras/, frames/, masks/, manifest.jsonl, markers.csv, truth.json)."""
    out = Path(out_dir)
    palette = palette if palette is not None else load_palette()
    rng = np.random.default_rng(spec.seed)
    calib = spec.camera if spec.camera is not None else sample_envelope_camera(
        rng, spec.image_size, spec.envelope
    )

    frames = []
    markers: dict[str, dict[int, MarkerSet]] = {}
    truths: dict[int, tuple[PersonTruth, ...]] = {}
    renders = []
    for frame_spec in spec.frames:
        render = generate_scene(calib, frame_spec, spec.image_size, palette)
        renders.append(render)
        frames.append(render.record)
        truths[frame_spec.frame_id] = render.truths
        for truth in render.truths:
            markers.setdefault(truth.subject_id, {})[frame_spec.frame_id] = truth.markers

    # all rendering succeeded; now write the bundle
    write_calibration(calib, out / "cameras" / f"{calib.camera_id}.json")
    for render in renders:
        write_image(render.frame, out / render.record.frame_image_path)
        for mask, det in zip(render.masks, render.record.detections):
            write_image(mask.bits.astype(np.uint8) * 255, out / det.mask_ref)
    write_manifest(DetectionsManifest(frames=tuple(frames)), out / "manifest.jsonl")
    if markers:
        write_markers(markers, out / "markers.csv")

    truth_doc = {
        "seed": spec.seed,
        "camera_id": calib.camera_id,
        "noise_sigma_px": spec.noise_sigma_px,
        "frames": [
            {
                "frame_id": frame_id,
                "persons": [
                    {
                        "subject_id": t.subject_id,
                        "detection_id": t.detection_id,
                        "height_cm": t.height_cm,
                        "torso_color": t.torso_color,
                        "leg_color": t.leg_color,
                        "gender": t.gender,
                        "gt_box": list(t.gt_box),
                        "head": list(t.head),
                        "feet": list(t.feet),
                    }
                    for t in truths[frame_id]
                ],
            }
            for frame_id in sorted(truths)
        ],
    }
    _atomic_write_text(out / "truth.json", json.dumps(truth_doc, indent=2) + "\n")
    return BundleTruth(camera=calib, truths=truths)


def perturb(points: Sequence[ImagePoint], sigma: float, seed: int) -> list[ImagePoint]:
    """Add seeded Gaussian pixel noise to head/feet points.

    The generator always draws two normals per point, so sigma = 0 is the
    exact identity while consuming the same stream.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    out = []
    for p in points:
        du, dv = rng.standard_normal(2)
        out.append(ImagePoint(p.u + sigma * du, p.v + sigma * dv, distorted=p.distorted))
    return out


def sample_visible_placement(
    calib: CameraCalibration,
    image_size: tuple[int, int],
    rng: np.random.Generator,
    height_cm: float,
    width_cm: float = DEFAULT_BODY_WIDTH_CM,
    min_pixel_height: float = 0.0,
    max_tries: int = 200,
) -> Optional[tuple[float, float]]:
    """Rejection-sample a ground position where a person of the given size
    is fully visible and at least ``min_pixel_height`` pixels tall.

    Returns None when no placement is found within ``max_tries``.
    """
    C = build_projection(calib)
    center = -calib.rotation.T @ calib.translation
    view = calib.rotation[2, :].copy()  # camera z-axis in world coordinates
    view[2] = 0.0
    norm = np.linalg.norm(view)
    if norm < 1e-9:  # looking straight down; any direction works
        view = np.array([0.0, 1.0, 0.0])
    else:
        view /= norm
    perp = np.array([-view[1], view[0], 0.0])
    fx = calib.focal[0]
    d_hi = 3000.0
    if min_pixel_height > 0:
        d_hi = min(d_hi, 1.2 * fx * height_cm / min_pixel_height)
    d_lo = min(150.0, d_hi / 2)

    for _ in range(max_tries):
        d = rng.uniform(d_lo, d_hi)
        lateral = rng.uniform(-0.35, 0.35) * d
        pos = center + d * view + lateral * perp
        person = PersonSpec(
            subject_id="probe",
            height_cm=height_cm,
            position=(float(pos[0]), float(pos[1])),
            torso_color="black",
            leg_color="black",
            gender="male",
            width_cm=width_cm,
        )
        try:
            if not person_in_frustum(calib, image_size, person):
                continue
        except SceneError:
            continue
        if min_pixel_height > 0:
            foot, lat = _billboard_axes(calib, person.position)
            head_pt, _ = _project_raw(calib, C, _billboard_point(foot, lat, 0.0, height_cm))
            feet_pt, _ = _project_raw(calib, C, foot)
            if feet_pt.v - head_pt.v < min_pixel_height:
                continue
        return (float(pos[0]), float(pos[1]))
    return None
