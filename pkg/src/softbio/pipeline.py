"""End-to-end drivers: per-frame candidate assembly, the parallel retrieval
loop, and the evaluation pass over a results stream.

Per-frame work is a pure function of the bundle contents, so frames may be
processed by any number of workers; results are always emitted in ascending
frame order and are byte-identical regardless of worker count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Mapping, Optional, Sequence

from .attributes import DEFAULT_SECOND_COLOR_MIN_SHARE, classify_color, merge_scores
from .cascade import Candidate, RetrievalResult, SemanticQuery, retrieve
from .dataio import FrameRecord, SequenceBundle, load_frame_image, load_mask
from .errors import RegionError
from .geometry import estimate_height
from .maskops import body_region, extract_patch, feet_point, head_point, mask_bbox
from .metrics import (
    DEFAULT_CORRECTNESS_TAU,
    DEFAULT_INIT_SKIP,
    DEFAULT_IOU_THRESHOLD,
    EvaluationReport,
    FrameEval,
    MarkerSet,
    aggregate,
    gt_bbox,
    iou,
)

logger = logging.getLogger(__name__)


def frame_candidates(bundle: SequenceBundle, frame: FrameRecord) -> list[Candidate]:
    """Build cascade candidates for one frame: decode masks, estimate
    heights, classify patch colors, and merge any external scores.

    Detections whose mask is too short for the body split get no baseline
    color scores (the color filter will drop them); external scores still
    apply.
    """
    frame_img = load_frame_image(bundle.root / frame.frame_image_path)
    calib = bundle.calibrations[frame.camera_id]
    candidates = []
    for det in frame.detections:
        mask = load_mask(bundle, frame, det)
        bbox = mask_bbox(mask)
        estimate = estimate_height(calib, head_point(mask), feet_point(mask), bundle.bias)
        torso_ranked = leg_ranked = None
        try:
            torso_ranked = classify_color(
                extract_patch(frame_img, body_region(mask, "torso")), bundle.palette
            )
            leg_ranked = classify_color(
                extract_patch(frame_img, body_region(mask, "legs")), bundle.palette
            )
        except RegionError as exc:
            logger.info(
                "frame %s detection %s: %s; baseline colors unavailable",
                frame.frame_id,
                det.detection_id,
                exc,
            )
        scores = merge_scores(torso_ranked, external=det.scores, leg_baseline=leg_ranked)
        candidates.append(
            Candidate(detection_id=det.detection_id, height=estimate, scores=scores, bbox=bbox)
        )
    return candidates


def process_frame(
    bundle: SequenceBundle,
    frame: FrameRecord,
    query: SemanticQuery,
    second_min_share: float = DEFAULT_SECOND_COLOR_MIN_SHARE,
) -> RetrievalResult:
    return retrieve(frame.frame_id, frame_candidates(bundle, frame), query, second_min_share)


def run_retrieval(
    bundle: SequenceBundle,
    query: SemanticQuery,
    workers: int = 1,
    second_min_share: float = DEFAULT_SECOND_COLOR_MIN_SHARE,
) -> list[RetrievalResult]:
    """Retrieve over every manifest frame, in frame order.

    ``workers`` only changes wall time; per-frame computation is pure, so
    the result list is identical for any worker count.
    """
    frames = bundle.manifest.frames
    if workers <= 1 or len(frames) <= 1:
        return [process_frame(bundle, f, query, second_min_share) for f in frames]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda f: process_frame(bundle, f, query, second_min_share), frames))


def evaluate_results(
    records: Sequence[Mapping],
    markers: Mapping[str, Mapping[int, MarkerSet]],
    tau: float = DEFAULT_CORRECTNESS_TAU,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    init_skip: int = DEFAULT_INIT_SKIP,
) -> EvaluationReport:
    """Score a results stream (parsed JSONL records) against marker ground
    truth.

    Every annotated (subject, frame) is evaluated; an annotated frame with
    no result record counts as a miss (logged), since retrieval emits one
    record per processed frame.
    """
    by_frame = {int(rec["frame_id"]): rec for rec in records}
    frames_by_subject: dict[str, list[FrameEval]] = {}
    for subject_id, per_frame in markers.items():
        evals = []
        for frame_id, marker_set in per_frame.items():
            gt = gt_bbox(marker_set)
            rec = by_frame.get(frame_id)
            if rec is None:
                logger.warning(
                    "subject %s frame %s: annotated but absent from results; counted as miss",
                    subject_id,
                    frame_id,
                )
                evals.append(FrameEval(frame_id=frame_id, correct=False, iou=0.0))
                continue
            unique = bool(rec.get("unique")) and len(rec.get("survivors", ())) == 1
            overlap = iou(tuple(rec["survivors"][0]["bbox"]), gt) if unique else 0.0
            evals.append(FrameEval(frame_id=frame_id, correct=unique and overlap >= tau, iou=overlap))
        frames_by_subject[subject_id] = evals
    return aggregate(frames_by_subject, iou_threshold=iou_threshold, init_skip=init_skip)
