"""Attribute classification: a deterministic culture-color classifier over
torso/leg patches, plus ingestion of externally produced (CNN) color and
gender scores through one uniform probability contract.

The baseline classifier converts patch pixels from sRGB to CIELAB (D65,
2-degree observer), assigns every pixel to its nearest palette centroid
under Euclidean distance (Delta-E 1976), and reports the vote share per
color.  Two-color garments therefore surface naturally as a dominant and a
second color.

Gender has no deterministic baseline; it is either supplied externally per
detection or reported as indeterminate, in which case the cascade's gender
filter passes candidates through.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import PaletteError, ScoreError
from .maskops import ColorPatch

GENDERS = ("male", "female")
PROVENANCES = ("baseline", "external")

DEFAULT_SECOND_COLOR_MIN_SHARE = 0.15
MIN_CENTROID_SEPARATION = 1.0  # Delta-E between any two palette entries

_PROB_SUM_TOL = 1e-6

# sRGB (linear) -> XYZ for the D65 white point, 2-degree observer.
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883])


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Vectorized sRGB (8-bit, gamma-encoded) -> CIELAB (D65).

    Accepts any (..., 3) array; returns float64 of the same leading shape.
    """
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T
    t = xyz / _D65_WHITE
    delta = 6.0 / 29.0
    f = np.where(t > delta**3, np.cbrt(t), t / (3.0 * delta * delta) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


@dataclass(frozen=True)
class PaletteColor:
    name: str
    srgb: tuple[int, int, int]
    lab: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.lab, dtype=np.float64)
        lab.flags.writeable = False
        object.__setattr__(self, "lab", lab)
        object.__setattr__(self, "srgb", tuple(int(v) for v in self.srgb))


@dataclass(frozen=True)
class CultureColorPalette:
    """Ordered, immutable culture-color vocabulary with CIELAB centroids."""

    entries: tuple[PaletteColor, ...]

    def __post_init__(self):
        if len(self.entries) < 2:
            raise PaletteError(f"palette needs at least 2 entries, got {len(self.entries)}")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise PaletteError(f"duplicate palette names: {dupes}")
        labs = self.lab_matrix()
        for i in range(len(labs)):
            for j in range(i + 1, len(labs)):
                de = float(np.linalg.norm(labs[i] - labs[j]))
                if de < MIN_CENTROID_SEPARATION:
                    raise PaletteError(
                        f"centroids {names[i]!r} and {names[j]!r} nearly coincide (dE = {de:.3f})"
                    )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.entries)

    def lab_matrix(self) -> np.ndarray:
        return np.stack([e.lab for e in self.entries])

    def srgb_of(self, name: str) -> tuple[int, int, int]:
        for e in self.entries:
            if e.name == name:
                return e.srgb
        raise KeyError(name)


def _palette_from_records(records, source: str) -> CultureColorPalette:
    entries = []
    for rec in records:
        try:
            name = str(rec["name"])
            srgb = tuple(int(v) for v in rec["srgb"])
        except (KeyError, TypeError, ValueError) as exc:
            raise PaletteError(f"{source}: malformed palette record {rec!r}") from exc
        if len(srgb) != 3 or any(not 0 <= v <= 255 for v in srgb):
            raise PaletteError(f"{source}: srgb triple out of range in record {rec!r}")
        entries.append(PaletteColor(name=name, srgb=srgb, lab=srgb_to_lab(np.array(srgb))))
    return CultureColorPalette(entries=tuple(entries))


def load_palette(path: str | Path | None = None) -> CultureColorPalette:
    """Load a palette file (JSON list of {name, srgb}); None loads the
    packaged 12-color default."""
    if path is None:
        text = resources.files("softbio.data").joinpath("default_palette.json").read_text("utf-8")
        return _palette_from_records(json.loads(text), "default palette")
    path = Path(path)
    try:
        records = json.loads(path.read_text("utf-8"))
    except FileNotFoundError as exc:
        raise PaletteError(f"palette file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise PaletteError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(records, list):
        raise PaletteError(f"{path}: palette file must be a JSON list")
    return _palette_from_records(records, str(path))


def classify_color(patch: ColorPatch, palette: CultureColorPalette) -> list[tuple[str, float]]:
    """Nearest-centroid vote shares for a patch, ranked descending.

    Every pixel votes for its closest centroid in CIELAB; scores are exact
    pixel fractions over the whole palette (zero-share colors included).
    Ties in score rank in palette order.
    """
    labs = srgb_to_lab(patch.pixels)
    centroids = palette.lab_matrix()
    d2 = ((labs[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties: palette order
    counts = np.bincount(nearest, minlength=len(palette))
    total = int(counts.sum())
    scored = [(name, int(counts[i]) / total) for i, name in enumerate(palette.names)]
    # stable sort keeps palette order among equal scores
    return sorted(scored, key=lambda item: -item[1])


def second_color(
    ranked: Sequence[tuple[str, float]],
    min_share: float = DEFAULT_SECOND_COLOR_MIN_SHARE,
) -> Optional[str]:
    """Second-ranked color if its share reaches ``min_share``, else None."""
    if len(ranked) < 2:
        return None
    name, share = ranked[1]
    return name if share >= min_share else None


def _check_prob_map(scores: Mapping[str, float], what: str) -> None:
    if not scores:
        raise ScoreError(f"{what}: empty score map")
    total = 0.0
    for name, p in scores.items():
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise ScoreError(f"{what}: probability {p} for {name!r} outside [0, 1]")
        total += p
    if abs(total - 1.0) > _PROB_SUM_TOL:
        raise ScoreError(f"{what}: probabilities sum to {total}, expected 1")


@dataclass(frozen=True)
class AttributeScores:
    """Per-detection attribute probabilities under one contract: every
    present map sums to 1 and lives in [0, 1].

    ``provenance`` records where the torso color scores came from;
    gender scores are always external or absent.
    """

    color_scores: Optional[dict[str, float]] = None
    second_color_scores: Optional[dict[str, float]] = None
    leg_color_scores: Optional[dict[str, float]] = None
    gender_scores: Optional[dict[str, float]] = None
    provenance: str = "baseline"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ScoreError(f"unknown provenance {self.provenance!r}")
        for label, scores in (
            ("color", self.color_scores),
            ("second color", self.second_color_scores),
            ("leg color", self.leg_color_scores),
            ("gender", self.gender_scores),
        ):
            if scores is not None:
                _check_prob_map(scores, label)
        if self.gender_scores is not None:
            unknown = set(self.gender_scores) - set(GENDERS)
            if unknown:
                raise ScoreError(f"gender: unknown classes {sorted(unknown)}")


def top_color(scores: Mapping[str, float]) -> str:
    """Highest-probability key; the first one in iteration order wins ties
    (baseline maps iterate in ranked order, so ties resolve to palette order)."""
    best_name, best_p = None, -1.0
    for name, p in scores.items():
        if p > best_p:
            best_name, best_p = name, p
    return best_name


def classify_gender(scores: Optional[AttributeScores]) -> Optional[tuple[str, float]]:
    """Argmax over external gender scores, or None when indeterminate.

    Indeterminate means: no scores attached, no gender map present, or an
    exact tie between the classes.
    """
    if scores is None or scores.gender_scores is None:
        return None
    _check_prob_map(scores.gender_scores, "gender")
    items = sorted(scores.gender_scores.items(), key=lambda kv: -kv[1])
    if len(items) > 1 and items[0][1] == items[1][1]:
        return None
    return items[0][0], float(items[0][1])


def merge_scores(
    baseline: Optional[Sequence[tuple[str, float]]],
    external: Optional[AttributeScores] = None,
    leg_baseline: Optional[Sequence[tuple[str, float]]] = None,
) -> AttributeScores:
    """Combine baseline classifier output with optional external scores.

    External color scores override the baseline (provenance flips to
    external); gender only ever comes from the external record.  Baseline
    ranked lists become dicts in ranked order so tie-breaking survives.
    """
    color = dict(baseline) if baseline is not None else None
    second = None
    leg = dict(leg_baseline) if leg_baseline is not None else None
    provenance = "baseline"
    gender = None
    if external is not None:
        if external.color_scores is not None:
            color = dict(external.color_scores)
            provenance = "external"
        if external.second_color_scores is not None:
            second = dict(external.second_color_scores)
        if external.leg_color_scores is not None:
            leg = dict(external.leg_color_scores)
        gender = dict(external.gender_scores) if external.gender_scores is not None else None
    return AttributeScores(
        color_scores=color,
        second_color_scores=second,
        leg_color_scores=leg,
        gender_scores=gender,
        provenance=provenance,
    )


def scores_from_payload(payload: Mapping, source: str = "scores") -> AttributeScores:
    """Parse the external score record attached to a manifest detection:
    {"color": {...}, "second_color": {...}, "leg_color": {...}, "gender": {...}}.
    """
    known = {"color", "second_color", "leg_color", "gender"}
    unknown = set(payload) - known
    if unknown:
        raise ScoreError(f"{source}: unknown score sections {sorted(unknown)}")

    def _section(key):
        sec = payload.get(key)
        if sec is None:
            return None
        if not isinstance(sec, Mapping):
            raise ScoreError(f"{source}: section {key!r} must be a map")
        return {str(k): float(v) for k, v in sec.items()}

    return AttributeScores(
        color_scores=_section("color"),
        second_color_scores=_section("second_color"),
        leg_color_scores=_section("leg_color"),
        gender_scores=_section("gender"),
        provenance="external",
    )
