"""Evaluation harness: ground-truth boxes from body markers, IoU, per-frame
correctness, TP rate, and corpus aggregation.

Definitions
===========
- The ground-truth box spans from the head-top marker down to the lowest
  toe, and horizontally across the most extreme marker positions; boxes
  are half-open, so the max-side coordinates gain +1.
- A frame counts as correct when retrieval is unique AND the survivor's
  box overlaps the ground truth with IoU >= tau (default 0.3).
- A frame's IoU is the unique survivor's IoU, or 0 when retrieval was
  empty or ambiguous.
- TP rate of a subject = 100 * correct frames / evaluated frames, after
  skipping the initialization window.
- Corpus aggregates: ``avg_tp_percent`` is the mean of per-subject TP
  rates; ``avg_iou_correct`` pools IoU over correctly retrieved frames
  only; ``avg_iou_all`` pools over every evaluated frame; a subject counts
  as retrieved when at least one of its frames is correct.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .cascade import RetrievalResult
from .errors import MetricsError

logger = logging.getLogger(__name__)

DEFAULT_CORRECTNESS_TAU = 0.3
DEFAULT_IOU_THRESHOLD = 0.4
DEFAULT_INIT_SKIP = 30

MARKER_NAMES = (
    "head_top",
    "neck_left",
    "neck_right",
    "shoulder_left",
    "shoulder_right",
    "waist_left",
    "waist_right",
    "toe_left",
    "toe_right",
)

Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class MarkerSet:
    """The nine annotated body points of one subject in one frame."""

    frame_id: int
    subject_id: str
    head_top: tuple[float, float]
    neck_left: tuple[float, float]
    neck_right: tuple[float, float]
    shoulder_left: tuple[float, float]
    shoulder_right: tuple[float, float]
    waist_left: tuple[float, float]
    waist_right: tuple[float, float]
    toe_left: tuple[float, float]
    toe_right: tuple[float, float]

    def __post_init__(self):
        for name in MARKER_NAMES:
            u, v = getattr(self, name)
            if not (math.isfinite(u) and math.isfinite(v)):
                raise MetricsError(
                    f"subject {self.subject_id} frame {self.frame_id}: non-finite marker {name}"
                )

    def points(self) -> list[tuple[float, float]]:
        return [getattr(self, name) for name in MARKER_NAMES]


def gt_bbox(markers: MarkerSet) -> Box:
    """Ground-truth box: top of the head to the lowest toe, horizontally
    bounded by the most extreme markers.  Half-open on the max sides."""
    us = [u for u, _ in markers.points()]
    top = markers.head_top[1]
    bottom = max(markers.toe_left[1], markers.toe_right[1])
    left, right = min(us), max(us)
    if right - left <= 0 or bottom - top <= 0:
        raise MetricsError(
            f"subject {markers.subject_id} frame {markers.frame_id}: degenerate marker extent"
        )
    return (left, top, right + 1.0, bottom + 1.0)


def iou(d: Box, gt: Box) -> float:
    """Intersection-over-union of two half-open boxes; 0 when disjoint."""
    ix = min(d[2], gt[2]) - max(d[0], gt[0])
    iy = min(d[3], gt[3]) - max(d[1], gt[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (d[2] - d[0]) * (d[3] - d[1]) + (gt[2] - gt[0]) * (gt[3] - gt[1]) - inter
    if union <= 0:
        return 0.0
    return inter / union


def frame_correct(result: RetrievalResult, gt: Box, tau: float = DEFAULT_CORRECTNESS_TAU) -> bool:
    """Correct retrieval: unique survivor whose box reaches IoU >= tau."""
    if not result.unique:
        return False
    return iou(result.survivors[0].bbox, gt) >= tau


@dataclass(frozen=True)
class FrameEval:
    """Outcome of one evaluated frame for one subject."""

    frame_id: int
    correct: bool
    iou: float


def evaluate_frame(result: RetrievalResult, gt: Box, tau: float = DEFAULT_CORRECTNESS_TAU) -> FrameEval:
    """Per-frame correctness and IoU (0 unless retrieval was unique)."""
    overlap = iou(result.survivors[0].bbox, gt) if result.unique else 0.0
    return FrameEval(frame_id=result.frame_id, correct=result.unique and overlap >= tau, iou=overlap)


def tp_rate(flags: Sequence[bool]) -> float:
    """Percentage of correct frames; undefined (raises) for zero frames."""
    if len(flags) == 0:
        raise MetricsError("TP rate undefined for zero evaluated frames")
    return 100.0 * sum(bool(f) for f in flags) / len(flags)


@dataclass(frozen=True)
class SubjectReport:
    subject_id: str
    tp_rate_percent: float
    mean_iou: float
    frames_evaluated: int


@dataclass(frozen=True)
class CorpusReport:
    subjects_retrieved: int
    avg_tp_percent: float
    avg_iou_correct: float
    avg_iou_all: float
    frac_iou_ge_threshold: float
    iou_threshold: float


@dataclass(frozen=True)
class EvaluationReport:
    per_subject: tuple[SubjectReport, ...]
    corpus: CorpusReport

    def to_dict(self) -> dict:
        return {
            "per_subject": [
                {
                    "subject_id": s.subject_id,
                    "tp_rate_percent": s.tp_rate_percent,
                    "mean_iou": s.mean_iou,
                    "frames_evaluated": s.frames_evaluated,
                }
                for s in self.per_subject
            ],
            "corpus": {
                "subjects_retrieved": self.corpus.subjects_retrieved,
                "avg_tp_percent": self.corpus.avg_tp_percent,
                "avg_iou_correct": self.corpus.avg_iou_correct,
                "avg_iou_all": self.corpus.avg_iou_all,
                "frac_iou_ge_threshold": self.corpus.frac_iou_ge_threshold,
                "iou_threshold": self.corpus.iou_threshold,
            },
        }


def aggregate(
    frames_by_subject: Mapping[str, Sequence[FrameEval]],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    init_skip: int = DEFAULT_INIT_SKIP,
) -> EvaluationReport:
    """Corpus report over per-subject frame evaluations.

    Frames are ordered by frame_id per subject and the first ``init_skip``
    are excluded as the initialization window.  Subjects left with no
    evaluable frames are dropped (logged); if none remain the corpus is
    unevaluable and this raises.
    """
    if not frames_by_subject:
        raise MetricsError("aggregate requires at least one subject")
    per_subject: list[SubjectReport] = []
    all_ious: list[float] = []
    correct_ious: list[float] = []
    for subject_id in sorted(frames_by_subject):
        frames = sorted(frames_by_subject[subject_id], key=lambda fe: fe.frame_id)[init_skip:]
        if not frames:
            logger.warning("subject %s: no evaluable frames after init skip, excluded", subject_id)
            continue
        flags = [fe.correct for fe in frames]
        ious = [fe.iou for fe in frames]
        per_subject.append(
            SubjectReport(
                subject_id=subject_id,
                tp_rate_percent=tp_rate(flags),
                mean_iou=sum(ious) / len(ious),
                frames_evaluated=len(frames),
            )
        )
        all_ious.extend(ious)
        correct_ious.extend(fe.iou for fe in frames if fe.correct)
    if not per_subject:
        raise MetricsError("no subject has evaluable frames after the initialization window")
    corpus = CorpusReport(
        subjects_retrieved=sum(1 for s in per_subject if s.tp_rate_percent > 0),
        avg_tp_percent=sum(s.tp_rate_percent for s in per_subject) / len(per_subject),
        avg_iou_correct=sum(correct_ious) / len(correct_ious) if correct_ious else 0.0,
        avg_iou_all=sum(all_ious) / len(all_ious),
        frac_iou_ge_threshold=sum(1 for x in all_ious if x >= iou_threshold) / len(all_ious),
        iou_threshold=iou_threshold,
    )
    return EvaluationReport(per_subject=tuple(per_subject), corpus=corpus)
