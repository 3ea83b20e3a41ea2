"""Dataset ingestion and result persistence.

Bundle layout (all JSON is UTF-8, CSV carries a header row)::

    root/
      cameras/<camera_id>.json   one calibration file per camera
      manifest.jsonl             one frame record per line, frame_id ascending
      frames/...                 frame images (PNG or binary PPM), paths from manifest
      masks/...                  mask images referenced by the manifest
      markers.csv                optional ground truth: frame_id,subject_id,marker_name,u,v
      palette.json               optional palette override
      bias.json                  optional map camera_id -> bias_cm
      truth.json                 optional synthetic-truth sidecar (informational)

Manifest record::

    {"frame_id": 3, "camera_id": "cam0", "frame_image_path": "frames/f000003.png",
     "detections": [{"detection_id": "d0",
                     "mask_ref": "masks/f000003_d0.png"  (or inline
                                 {"width": W, "height": H, "runs": "0:3,1:2,..."}),
                     "scores": {"color": {...}, "gender": {...}}  (optional)}]}

Loading is single-threaded and fail-fast: every cross-reference is checked
before any frame is processed.  Writers are atomic (write to a temp file in
the target directory, then rename), so no partial output file ever lands.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError

from .attributes import AttributeScores, CultureColorPalette, load_palette, scores_from_payload
from .cascade import RetrievalResult, result_record
from .errors import BundleError, MaskError, MetricsError, PaletteError, ScoreError
from .geometry import CameraCalibration, HeightBias
from .maskops import Mask, decode_png, decode_rle
from .metrics import MARKER_NAMES, Box, MarkerSet

logger = logging.getLogger(__name__)

SURVIVOR_BOX_COLOR = (0, 255, 0)
GT_BOX_COLOR = (255, 215, 0)
LABEL_COLOR = (255, 255, 255)


# ---------------------------------------------------------------------------
# atomic writing

def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# calibration / bias

def calibration_from_dict(data: Mapping, source: str) -> CameraCalibration:
    try:
        rotation = np.array([float(x) for x in data["rotation"]], dtype=np.float64).reshape(3, 3)
        return CameraCalibration(
            camera_id=str(data["camera_id"]),
            focal=(float(data["focal"][0]), float(data["focal"][1])),
            principal=(float(data["principal"][0]), float(data["principal"][1])),
            rotation=rotation,
            translation=np.array([float(x) for x in data["translation"]], dtype=np.float64),
            radial=tuple(float(k) for k in data["radial"]),
            skew=float(data.get("skew", 0.0)),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise BundleError(f"{source}: malformed calibration: {exc}") from exc


def calibration_to_dict(calib: CameraCalibration) -> dict:
    return {
        "camera_id": calib.camera_id,
        "focal": list(calib.focal),
        "principal": list(calib.principal),
        "skew": calib.skew,
        "rotation": [float(x) for x in calib.rotation.ravel()],
        "translation": [float(x) for x in calib.translation],
        "radial": list(calib.radial),
    }


def load_calibration(path: str | Path) -> CameraCalibration:
    path = Path(path)
    try:
        data = json.loads(path.read_text("utf-8"))
    except FileNotFoundError as exc:
        raise BundleError(f"calibration file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}: invalid JSON: {exc}") from exc
    return calibration_from_dict(data, str(path))


def write_calibration(calib: CameraCalibration, path: str | Path) -> None:
    _atomic_write_text(Path(path), json.dumps(calibration_to_dict(calib), indent=2) + "\n")


def load_bias(path: str | Path) -> HeightBias:
    path = Path(path)
    try:
        data = json.loads(path.read_text("utf-8"))
    except FileNotFoundError as exc:
        raise BundleError(f"bias file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise BundleError(f"{path}: bias file must be a JSON object")
    try:
        return HeightBias({str(k): float(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise BundleError(f"{path}: malformed bias map: {exc}") from exc


def write_bias(bias: HeightBias, path: str | Path) -> None:
    _atomic_write_text(Path(path), json.dumps(dict(bias.bias_cm), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# markers

def load_markers(path: str | Path) -> dict[str, dict[int, MarkerSet]]:
    """Parse the markers CSV into {subject_id: {frame_id: MarkerSet}}.

    Each (frame, subject) needs all nine marker rows exactly once.
    """
    path = Path(path)
    try:
        text = path.read_text("utf-8")
    except FileNotFoundError as exc:
        raise BundleError(f"markers file not found: {path}") from exc
    reader = csv.DictReader(text.splitlines())
    expected = {"frame_id", "subject_id", "marker_name", "u", "v"}
    if reader.fieldnames is None or set(reader.fieldnames) != expected:
        raise BundleError(f"{path}: header must be exactly {sorted(expected)}, got {reader.fieldnames}")
    staged: dict[tuple[int, str], dict[str, tuple[float, float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            frame_id = int(row["frame_id"])
            subject_id = row["subject_id"]
            name = row["marker_name"]
            point = (float(row["u"]), float(row["v"]))
        except (TypeError, ValueError) as exc:
            raise BundleError(f"{path}:{lineno}: malformed marker row: {exc}") from exc
        if name not in MARKER_NAMES:
            raise BundleError(f"{path}:{lineno}: unknown marker name {name!r}")
        slot = staged.setdefault((frame_id, subject_id), {})
        if name in slot:
            raise BundleError(f"{path}:{lineno}: duplicate marker {name} for subject {subject_id} frame {frame_id}")
        slot[name] = point
    out: dict[str, dict[int, MarkerSet]] = {}
    for (frame_id, subject_id), points in staged.items():
        missing = set(MARKER_NAMES) - set(points)
        if missing:
            raise BundleError(
                f"{path}: subject {subject_id} frame {frame_id} missing markers {sorted(missing)}"
            )
        try:
            ms = MarkerSet(frame_id=frame_id, subject_id=subject_id, **points)
        except MetricsError as exc:
            raise BundleError(f"{path}: {exc}") from exc
        out.setdefault(subject_id, {})[frame_id] = ms
    return out


def write_markers(markers: Mapping[str, Mapping[int, MarkerSet]], path: str | Path) -> None:
    lines = ["frame_id,subject_id,marker_name,u,v"]
    for subject_id in sorted(markers):
        for frame_id in sorted(markers[subject_id]):
            ms = markers[subject_id][frame_id]
            for name in MARKER_NAMES:
                u, v = getattr(ms, name)
                lines.append(f"{frame_id},{subject_id},{name},{u!r},{v!r}")
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# manifest

@dataclass(frozen=True)
class DetectionRecord:
    detection_id: str
    mask_ref: str | dict
    scores: Optional[AttributeScores] = None


@dataclass(frozen=True)
class FrameRecord:
    frame_id: int
    camera_id: str
    frame_image_path: str
    detections: tuple[DetectionRecord, ...] = ()


@dataclass(frozen=True)
class DetectionsManifest:
    frames: tuple[FrameRecord, ...] = ()


def _parse_mask_ref(ref, where: str):
    if isinstance(ref, str):
        return ref
    if isinstance(ref, Mapping):
        missing = {"width", "height", "runs"} - set(ref)
        if missing:
            raise BundleError(f"{where}: inline mask_ref missing keys {sorted(missing)}")
        return {"width": int(ref["width"]), "height": int(ref["height"]), "runs": str(ref["runs"])}
    raise BundleError(f"{where}: mask_ref must be a path or an inline RLE object")


def load_manifest(path: str | Path) -> DetectionsManifest:
    path = Path(path)
    try:
        text = path.read_text("utf-8")
    except FileNotFoundError as exc:
        raise BundleError(f"manifest not found: {path}") from exc
    frames: list[FrameRecord] = []
    last_frame_id = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BundleError(f"{where}: invalid JSON: {exc}") from exc
        try:
            frame_id = int(rec["frame_id"])
            camera_id = str(rec["camera_id"])
            frame_image_path = str(rec["frame_image_path"])
            raw_dets = rec.get("detections", [])
        except (KeyError, TypeError, ValueError) as exc:
            raise BundleError(f"{where}: malformed frame record: {exc}") from exc
        if last_frame_id is not None and frame_id <= last_frame_id:
            raise BundleError(f"{where}: frame_id {frame_id} not strictly increasing after {last_frame_id}")
        last_frame_id = frame_id
        detections = []
        for det in raw_dets:
            try:
                detection_id = str(det["detection_id"])
                mask_ref = _parse_mask_ref(det["mask_ref"], where)
            except (KeyError, TypeError) as exc:
                raise BundleError(f"{where}: malformed detection record: {exc}") from exc
            scores = None
            if det.get("scores") is not None:
                try:
                    scores = scores_from_payload(det["scores"], source=f"{where} detection {detection_id}")
                except (ScoreError, TypeError, ValueError) as exc:
                    raise BundleError(f"{where}: detection {detection_id}: bad scores: {exc}") from exc
            detections.append(DetectionRecord(detection_id, mask_ref, scores))
        frames.append(FrameRecord(frame_id, camera_id, frame_image_path, tuple(detections)))
    return DetectionsManifest(frames=tuple(frames))


def manifest_record(frame: FrameRecord) -> dict:
    dets = []
    for d in frame.detections:
        entry: dict = {"detection_id": d.detection_id, "mask_ref": d.mask_ref}
        if d.scores is not None:
            payload = {}
            if d.scores.color_scores is not None:
                payload["color"] = d.scores.color_scores
            if d.scores.second_color_scores is not None:
                payload["second_color"] = d.scores.second_color_scores
            if d.scores.leg_color_scores is not None:
                payload["leg_color"] = d.scores.leg_color_scores
            if d.scores.gender_scores is not None:
                payload["gender"] = d.scores.gender_scores
            entry["scores"] = payload
        dets.append(entry)
    return {
        "frame_id": frame.frame_id,
        "camera_id": frame.camera_id,
        "frame_image_path": frame.frame_image_path,
        "detections": dets,
    }


def write_manifest(manifest: DetectionsManifest, path: str | Path) -> None:
    lines = [json.dumps(manifest_record(f), separators=(",", ":")) for f in manifest.frames]
    _atomic_write_text(Path(path), "\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# bundle

@dataclass(frozen=True)
class SequenceBundle:
    """A fully validated dataset: manifest plus every side table it references."""

    root: Path
    manifest: DetectionsManifest
    calibrations: Mapping[str, CameraCalibration]
    bias: HeightBias
    palette: CultureColorPalette
    markers: Optional[Mapping[str, Mapping[int, MarkerSet]]] = None


def load_bundle(root: str | Path) -> SequenceBundle:
    """Load and cross-validate a bundle directory (fail-fast; nothing is
    processed until every reference resolves)."""
    root = Path(root)
    if not root.is_dir():
        raise BundleError(f"bundle root is not a directory: {root}")
    manifest = load_manifest(root / "manifest.jsonl")

    calibrations: dict[str, CameraCalibration] = {}
    for frame in manifest.frames:
        if frame.camera_id not in calibrations:
            cam_path = root / "cameras" / f"{frame.camera_id}.json"
            if not cam_path.is_file():
                raise BundleError(
                    f"frame {frame.frame_id} references camera {frame.camera_id!r} "
                    f"but {cam_path} does not exist"
                )
            calib = load_calibration(cam_path)
            if calib.camera_id != frame.camera_id:
                raise BundleError(
                    f"{cam_path}: camera_id {calib.camera_id!r} does not match filename"
                )
            calibrations[frame.camera_id] = calib
        frame_path = root / frame.frame_image_path
        if not frame_path.is_file():
            raise BundleError(f"frame {frame.frame_id}: missing image {frame_path}")
        for det in frame.detections:
            if isinstance(det.mask_ref, str):
                mask_path = root / det.mask_ref
                if not mask_path.is_file():
                    raise BundleError(
                        f"frame {frame.frame_id} detection {det.detection_id}: "
                        f"unresolvable mask {mask_path}"
                    )

    bias_path = root / "bias.json"
    bias = load_bias(bias_path) if bias_path.is_file() else HeightBias({})
    palette_path = root / "palette.json"
    try:
        palette = load_palette(palette_path if palette_path.is_file() else None)
    except PaletteError as exc:
        raise BundleError(f"{palette_path}: {exc}") from exc
    markers_path = root / "markers.csv"
    markers = load_markers(markers_path) if markers_path.is_file() else None
    return SequenceBundle(
        root=root,
        manifest=manifest,
        calibrations=calibrations,
        bias=bias,
        palette=palette,
        markers=markers,
    )


def load_mask(bundle: SequenceBundle, frame: FrameRecord, det: DetectionRecord) -> Mask:
    if isinstance(det.mask_ref, str):
        data = (bundle.root / det.mask_ref).read_bytes()
        try:
            return decode_png(data, frame_id=frame.frame_id, detection_id=det.detection_id)
        except MaskError as exc:
            raise BundleError(f"{bundle.root / det.mask_ref}: {exc}") from exc
    ref = det.mask_ref
    try:
        return decode_rle(
            ref["runs"], ref["width"], ref["height"],
            frame_id=frame.frame_id, detection_id=det.detection_id,
        )
    except MaskError as exc:
        raise BundleError(
            f"frame {frame.frame_id} detection {det.detection_id}: inline mask: {exc}"
        ) from exc


def load_frame_image(path: str | Path) -> np.ndarray:
    """Frame image (PNG or binary PPM) as an (H, W, 3) uint8 array."""
    path = Path(path)
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError as exc:
        raise BundleError(f"frame image not found: {path}") from exc
    except (UnidentifiedImageError, OSError) as exc:
        raise BundleError(f"{path}: cannot decode frame image: {exc}") from exc
    return np.asarray(img.convert("RGB"))


def write_image(array: np.ndarray, path: str | Path) -> None:
    """PNG-encode an (H, W) or (H, W, 3) uint8 array atomically."""
    buf = io.BytesIO()
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(buf, format="PNG")
    _atomic_write_bytes(Path(path), buf.getvalue())


# ---------------------------------------------------------------------------
# results and reports

def write_results(results: Iterable[RetrievalResult], path: str | Path) -> None:
    """Write the JSON-lines result stream atomically, one record per frame."""
    lines = [json.dumps(result_record(r), separators=(",", ":")) for r in results]
    _atomic_write_text(Path(path), "\n".join(lines) + ("\n" if lines else ""))


def read_results(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text("utf-8")
    except FileNotFoundError as exc:
        raise BundleError(f"results file not found: {path}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise BundleError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
    return records


def write_report(report_dict: Mapping, path: str | Path) -> None:
    _atomic_write_text(Path(path), json.dumps(report_dict, indent=2) + "\n")


def write_overlay(
    frame: np.ndarray,
    result: RetrievalResult,
    gt: Optional[Box],
    path: str | Path,
) -> None:
    """Render survivor boxes (and optionally the GT box) onto the frame.

    Empty survivor sets produce the frame with a "no match" label so a
    reviewer can scan overlay directories frame by frame.
    """
    img = Image.fromarray(np.asarray(frame, dtype=np.uint8)).convert("RGB")
    draw = ImageDraw.Draw(img)
    for c in result.survivors:
        x0, y0, x1, y1 = c.bbox
        draw.rectangle([x0, y0, x1 - 1, y1 - 1], outline=SURVIVOR_BOX_COLOR, width=2)
    if gt is not None:
        draw.rectangle([gt[0], gt[1], gt[2] - 1, gt[3] - 1], outline=GT_BOX_COLOR, width=2)
    if result.survivors:
        label = f"stage={result.decision_stage} unique={str(result.unique).lower()}"
    else:
        label = f"no match (stage={result.decision_stage})"
    draw.text((5, 5), label, fill=(0, 0, 0))
    draw.text((4, 4), label, fill=LABEL_COLOR)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    _atomic_write_bytes(Path(path), buf.getvalue())
