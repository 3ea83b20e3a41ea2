"""The linear filter engine: semantic query parsing and the fixed-order
attribute cascade with minimal-attribute early exit.

Filters run height -> torso color -> torso second color (if queried) ->
gender -> leg color (if queried).  Each filter can only shrink the
candidate set; as soon as at most one candidate survives the cascade stops
and records the stage that decided.  An empty survivor set is a valid
terminal state (filters never resurrect candidates), mirroring how a
height misclassification propagates through the rest of the chain.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .attributes import (
    DEFAULT_SECOND_COLOR_MIN_SHARE,
    GENDERS,
    AttributeScores,
    CultureColorPalette,
    classify_gender,
    second_color,
    top_color,
)
from .errors import QueryError
from .geometry import HeightEstimate

logger = logging.getLogger(__name__)

STAGES = ("height", "torso_color", "torso_second_color", "gender", "leg_color", "exhausted")
COLOR_SLOTS = ("torso", "torso_second", "leg")


@dataclass(frozen=True)
class SemanticQuery:
    """A person description: height band (cm, inclusive), torso color,
    gender, and optional second torso color and leg color."""

    height_min_cm: float
    height_max_cm: float
    torso_color: str
    gender: str
    torso_second_color: Optional[str] = None
    leg_color: Optional[str] = None

    def __post_init__(self):
        if not self.height_min_cm < self.height_max_cm:
            raise QueryError(
                f"height range [{self.height_min_cm}, {self.height_max_cm}] is not increasing"
            )
        if self.gender not in GENDERS:
            raise QueryError(f"unknown gender {self.gender!r}; expected one of {GENDERS}")


def parse_query(source: str | Path | Mapping, palette: CultureColorPalette) -> SemanticQuery:
    """Load and validate a query file (or pre-parsed mapping) against the
    active palette vocabulary."""
    if isinstance(source, Mapping):
        data = dict(source)
        where = "query"
    else:
        path = Path(source)
        where = str(path)
        try:
            data = json.loads(path.read_text("utf-8"))
        except FileNotFoundError as exc:
            raise QueryError(f"query file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise QueryError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise QueryError(f"{path}: query must be a JSON object")

    for key in ("height_min_cm", "height_max_cm", "torso_color", "gender"):
        if key not in data:
            raise QueryError(f"{where}: missing mandatory field {key!r}")
    unknown = set(data) - {
        "height_min_cm",
        "height_max_cm",
        "torso_color",
        "torso_second_color",
        "gender",
        "leg_color",
    }
    if unknown:
        raise QueryError(f"{where}: unknown fields {sorted(unknown)}")
    try:
        query = SemanticQuery(
            height_min_cm=float(data["height_min_cm"]),
            height_max_cm=float(data["height_max_cm"]),
            torso_color=str(data["torso_color"]),
            gender=str(data["gender"]),
            torso_second_color=None
            if data.get("torso_second_color") is None
            else str(data["torso_second_color"]),
            leg_color=None if data.get("leg_color") is None else str(data["leg_color"]),
        )
    except (TypeError, ValueError) as exc:
        raise QueryError(f"{where}: {exc}") from exc
    for label, name in (
        ("torso_color", query.torso_color),
        ("torso_second_color", query.torso_second_color),
        ("leg_color", query.leg_color),
    ):
        if name is not None and name not in palette:
            raise QueryError(f"{where}: {label} {name!r} not in palette {list(palette.names)}")
    return query


@dataclass(frozen=True)
class Candidate:
    """Per-person state flowing through the filters."""

    detection_id: str
    height: HeightEstimate
    scores: Optional[AttributeScores]
    bbox: tuple[int, int, int, int]

    @property
    def estimated_height_cm(self) -> float:
        return self.height.height_cm


@dataclass(frozen=True)
class RetrievalResult:
    """Survivors of one frame plus the cascade stage that finalized them."""

    frame_id: int
    survivors: tuple[Candidate, ...]
    decision_stage: str
    unique: bool


def height_filter(cands: Sequence[Candidate], query: SemanticQuery) -> list[Candidate]:
    """Keep candidates inside the inclusive height band; implausible
    (flagged) heights never pass."""
    return [
        c
        for c in cands
        if not c.height.implausible
        and query.height_min_cm <= c.estimated_height_cm <= query.height_max_cm
    ]


def candidate_color(
    c: Candidate,
    slot: str,
    second_min_share: float = DEFAULT_SECOND_COLOR_MIN_SHARE,
) -> Optional[str]:
    """The candidate's color in a slot, or None when unavailable.

    torso/leg slots take the argmax of their score maps; the second-color
    slot prefers an explicit external distribution and otherwise derives
    the runner-up of the torso scores when its share clears the threshold.
    """
    if slot not in COLOR_SLOTS:
        raise ValueError(f"unknown color slot {slot!r}; expected one of {COLOR_SLOTS}")
    if c.scores is None:
        return None
    if slot == "torso":
        if c.scores.color_scores is None:
            return None
        return top_color(c.scores.color_scores)
    if slot == "leg":
        if c.scores.leg_color_scores is None:
            return None
        return top_color(c.scores.leg_color_scores)
    if c.scores.second_color_scores is not None:
        return top_color(c.scores.second_color_scores)
    if c.scores.color_scores is None:
        return None
    ranked = sorted(c.scores.color_scores.items(), key=lambda kv: -kv[1])
    return second_color(ranked, min_share=second_min_share)


def color_filter(
    cands: Sequence[Candidate],
    color_name: str,
    slot: str,
    second_min_share: float = DEFAULT_SECOND_COLOR_MIN_SHARE,
) -> list[Candidate]:
    """Keep candidates whose color in ``slot`` equals the queried name.

    Candidates with no usable color in the slot (mask too small for a
    patch, or no second color present) cannot match and are dropped.
    """
    kept = []
    for c in cands:
        color = candidate_color(c, slot, second_min_share)
        if color is None:
            logger.info("detection %s: no %s color available, dropped by color filter", c.detection_id, slot)
        elif color == color_name:
            kept.append(c)
    return kept


def gender_filter(cands: Sequence[Candidate], gender: str) -> list[Candidate]:
    """Keep candidates classified as the queried gender; indeterminate
    candidates pass through (a missing model must not erase candidates)."""
    kept = []
    for c in cands:
        result = classify_gender(c.scores)
        if result is None:
            logger.info("detection %s: gender indeterminate, passed through", c.detection_id)
            kept.append(c)
        elif result[0] == gender:
            kept.append(c)
    return kept


def retrieve(
    frame_id: int,
    candidates: Sequence[Candidate],
    query: SemanticQuery,
    second_min_share: float = DEFAULT_SECOND_COLOR_MIN_SHARE,
) -> RetrievalResult:
    """Run the fixed-order cascade on one frame's candidates.

    Filters apply until at most one candidate remains; the decision stage
    is the last filter applied, or ``exhausted`` when every filter ran and
    multiple candidates still stand.
    """
    survivors = height_filter(candidates, query)
    stage = "height"
    if len(survivors) > 1:
        survivors = color_filter(survivors, query.torso_color, "torso", second_min_share)
        stage = "torso_color"
    if len(survivors) > 1 and query.torso_second_color is not None:
        survivors = color_filter(survivors, query.torso_second_color, "torso_second", second_min_share)
        stage = "torso_second_color"
    if len(survivors) > 1:
        survivors = gender_filter(survivors, query.gender)
        stage = "gender"
    if len(survivors) > 1 and query.leg_color is not None:
        survivors = color_filter(survivors, query.leg_color, "leg", second_min_share)
        stage = "leg_color"
    if len(survivors) > 1:
        stage = "exhausted"
    return RetrievalResult(
        frame_id=frame_id,
        survivors=tuple(survivors),
        decision_stage=stage,
        unique=len(survivors) == 1,
    )


def result_record(result: RetrievalResult, second_min_share: float = DEFAULT_SECOND_COLOR_MIN_SHARE) -> dict:
    """JSON-serializable record for the results stream (one line per frame)."""
    survivors = []
    for c in result.survivors:
        gender = classify_gender(c.scores)
        survivors.append(
            {
                "detection_id": c.detection_id,
                "height_cm": c.estimated_height_cm,
                "bbox": list(c.bbox),
                "top_color": candidate_color(c, "torso", second_min_share),
                "gender": None if gender is None else gender[0],
            }
        )
    return {
        "frame_id": result.frame_id,
        "survivors": survivors,
        "decision_stage": result.decision_stage,
        "unique": result.unique,
    }
