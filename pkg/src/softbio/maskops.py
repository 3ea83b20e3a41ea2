"""Segmentation-mask handling: decoding, bounding boxes, head/feet points,
and background-free torso/leg regions.

Masks arrive either as 8-bit grayscale PNGs (0 = background, >= 128 =
person) or as inline run-length strings of ``value:length`` pairs scanning
row-major, e.g. ``"0:3,1:2,0:3"``.

The body split follows the golden-ratio proportions of the pixel extent of
the mask itself (not the frame): with the occupied rows spanning
[top, top + h), the torso is rows [top + 0.2h, top + 0.5h) and the legs
are [top + 0.5h, top + h), boundaries rounded half-up.  Head and feet
points are row centroids: the head sits on the top edge of the topmost
occupied row, the feet on the bottom edge of the bottommost one, so that
the feet point touches the ground plane.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import MaskError, RegionError
from .geometry import ImagePoint

# Masks shorter than this cannot yield a usable torso/leg split.
MIN_REGION_EXTENT_PX = 10

REGION_KINDS = ("torso", "legs")

# Fractions of the mask's vertical pixel extent, measured from the top.
TORSO_TOP_FRACTION = 0.20
TORSO_BOTTOM_FRACTION = 0.50


@dataclass(frozen=True)
class Mask:
    """One segmented person: a binary occupancy grid plus identity labels."""

    width: int
    height: int
    bits: np.ndarray
    frame_id: int = 0
    detection_id: str = ""

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise MaskError(
                f"mask bits shape {bits.shape} does not match {self.height}x{self.width}"
            )
        if not bits.any():
            raise MaskError(f"mask {self.detection_id!r} has no set pixels")
        bits = bits.copy()
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)


@dataclass(frozen=True)
class BodyRegion:
    """Mask pixels inside one body band.

    ``rows``/``cols`` list the pixel coordinates in row-major scan order;
    they are always a subset of the mask's set pixels, so sampling them
    from the frame never touches background.
    """

    kind: str
    row_span: tuple[int, int]
    rows: np.ndarray
    cols: np.ndarray
    mask_width: int
    mask_height: int

    @property
    def pixel_count(self) -> int:
        return int(self.rows.size)


@dataclass(frozen=True)
class ColorPatch:
    """RGB samples taken at a body region's pixel positions."""

    pixels: np.ndarray  # (n, 3) uint8
    source_region: str

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 2 or px.shape[1] != 3 or px.shape[0] == 0:
            raise RegionError(f"color patch must be a non-empty (n, 3) array, got {px.shape}")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)


def decode_rle(runs: str, width: int, height: int, frame_id: int = 0, detection_id: str = "") -> Mask:
    """Expand a ``value:length`` run string into a mask.

    Runs scan row-major and must cover exactly width x height pixels with
    values 0 or 1.
    """
    flat = np.empty(width * height, dtype=bool)
    pos = 0
    for token in runs.split(","):
        try:
            value_s, length_s = token.strip().split(":")
            value, length = int(value_s), int(length_s)
        except ValueError:
            raise MaskError(f"malformed RLE token {token!r}") from None
        if value not in (0, 1) or length < 1:
            raise MaskError(f"invalid RLE run {token!r} (value must be 0/1, length >= 1)")
        if pos + length > flat.size:
            raise MaskError(f"RLE overruns {width}x{height} grid at offset {pos}")
        flat[pos : pos + length] = bool(value)
        pos += length
    if pos != flat.size:
        raise MaskError(f"RLE covers {pos} pixels of a {width}x{height} grid")
    return Mask(width, height, flat.reshape(height, width), frame_id, detection_id)


def encode_rle(m: Mask) -> str:
    """Canonical run-length string for a mask; inverse of :func:`decode_rle`."""
    flat = m.bits.ravel().astype(np.int8)
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [flat.size]))
    return ",".join(f"{int(flat[s])}:{int(e - s)}" for s, e in zip(starts, ends))


def decode_png(data: bytes, frame_id: int = 0, detection_id: str = "") -> Mask:
    """Decode an 8-bit grayscale mask image; values >= 128 are person."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise MaskError(f"cannot decode mask image: {exc}") from exc
    gray = np.asarray(img.convert("L"))
    return Mask(gray.shape[1], gray.shape[0], gray >= 128, frame_id, detection_id)


def decode_mask(
    payload: bytes | str,
    width: int | None = None,
    height: int | None = None,
    frame_id: int = 0,
    detection_id: str = "",
) -> Mask:
    """Decode a mask payload: bytes are treated as an image file, strings as
    inline RLE (which additionally needs width/height)."""
    if isinstance(payload, (bytes, bytearray)):
        return decode_png(bytes(payload), frame_id, detection_id)
    if isinstance(payload, str):
        if width is None or height is None:
            raise MaskError("RLE payload requires explicit width and height")
        return decode_rle(payload, width, height, frame_id, detection_id)
    raise MaskError(f"unsupported mask payload type {type(payload).__name__}")


def mask_bbox(m: Mask) -> tuple[int, int, int, int]:
    """Tightest half-open box (x0, y0, x1, y1) containing all set pixels."""
    rows, cols = np.nonzero(m.bits)
    return (int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)


def head_point(m: Mask) -> ImagePoint:
    """Centroid of the topmost occupied row; v is that row index (the top
    edge of the head pixels).  Returned in raw (distorted) coordinates."""
    rows, cols = np.nonzero(m.bits)
    top = rows.min()
    u = float(cols[rows == top].mean())
    return ImagePoint(u, float(top), distorted=True)


def feet_point(m: Mask) -> ImagePoint:
    """Centroid of the bottommost occupied row; v is that row + 1 (the
    bottom pixel edge), so the feet touch the ground plane."""
    rows, cols = np.nonzero(m.bits)
    bottom = rows.max()
    u = float(cols[rows == bottom].mean())
    return ImagePoint(u, float(bottom) + 1.0, distorted=True)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def body_region(m: Mask, kind: str) -> BodyRegion:
    """Cut the torso or legs band out of a mask.

    Bands are fractions of the mask's own vertical pixel extent h:
    torso [0.2h, 0.5h), legs [0.5h, h), both offset from the topmost
    occupied row and rounded half-up.  Masks with h < 10 px are rejected.
    """
    if kind not in REGION_KINDS:
        raise ValueError(f"unknown region kind {kind!r}; expected one of {REGION_KINDS}")
    occupied = np.flatnonzero(m.bits.any(axis=1))
    top, bottom = int(occupied[0]), int(occupied[-1])
    h = bottom - top + 1
    if h < MIN_REGION_EXTENT_PX:
        raise RegionError(f"mask extent {h} px is below the {MIN_REGION_EXTENT_PX} px minimum")
    if kind == "torso":
        lo = top + _round_half_up(TORSO_TOP_FRACTION * h)
        hi = top + _round_half_up(TORSO_BOTTOM_FRACTION * h)
    else:
        lo = top + _round_half_up(TORSO_BOTTOM_FRACTION * h)
        hi = top + h
    band = np.zeros_like(m.bits)
    band[lo:hi, :] = m.bits[lo:hi, :]
    rows, cols = np.nonzero(band)
    return BodyRegion(
        kind=kind,
        row_span=(lo, hi),
        rows=rows,
        cols=cols,
        mask_width=m.width,
        mask_height=m.height,
    )


def extract_patch(frame: np.ndarray, region: BodyRegion) -> ColorPatch:
    """Sample the frame exactly at the region's pixel positions.

    The frame must be an (H, W, 3) array at least as large as the mask the
    region came from; background pixels are excluded by construction.
    """
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise RegionError(f"frame must be (H, W, 3), got {frame.shape}")
    if frame.shape[0] < region.mask_height or frame.shape[1] < region.mask_width:
        raise RegionError(
            f"frame {frame.shape[1]}x{frame.shape[0]} smaller than mask "
            f"{region.mask_width}x{region.mask_height}"
        )
    if region.pixel_count == 0:
        raise RegionError(f"empty {region.kind} patch")
    return ColorPatch(pixels=frame[region.rows, region.cols], source_region=region.kind)
