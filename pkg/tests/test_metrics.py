"""Metrics tests.

The IoU closed form is checked against literal per-pixel set counting on
integer boxes; aggregation fixtures are recomputed by hand inline so the
expected values never depend on the code under test.
"""

from __future__ import annotations

import numpy as np
import pytest

from test_cascade import make_candidate

from softbio.cascade import RetrievalResult
from softbio.errors import MetricsError
from softbio.metrics import (
    FrameEval,
    MarkerSet,
    aggregate,
    evaluate_frame,
    frame_correct,
    gt_bbox,
    iou,
    tp_rate,
)


def markers_example() -> MarkerSet:
    return MarkerSet(
        frame_id=0,
        subject_id="s0",
        head_top=(50, 10),
        neck_left=(47, 25),
        neck_right=(53, 25),
        shoulder_left=(40, 30),
        shoulder_right=(62, 30),
        waist_left=(42, 70),
        waist_right=(58, 70),
        toe_left=(48, 120),
        toe_right=(60, 122),
    )


def iou_pixel_count(a, b) -> float:
    """Brute-force oracle: enumerate pixels of half-open integer boxes."""
    cells_a = {(x, y) for x in range(a[0], a[2]) for y in range(a[1], a[3])}
    cells_b = {(x, y) for x in range(b[0], b[2]) for y in range(b[1], b[3])}
    union = cells_a | cells_b
    if not union:
        return 0.0
    return len(cells_a & cells_b) / len(union)


def result_with(bbox, unique=True, extra=0) -> RetrievalResult:
    survivors = [make_candidate("a", bbox=bbox)]
    survivors += [make_candidate(f"x{i}", bbox=bbox) for i in range(extra)]
    return RetrievalResult(
        frame_id=0,
        survivors=tuple(survivors),
        decision_stage="height",
        unique=unique and len(survivors) == 1,
    )


class TestGtBbox:
    def test_worked_example(self):
        # min u = 40 (shoulder_left), max u = 62 (shoulder_right),
        # top = head v = 10, lowest toe v = 122; half-open adds +1
        assert gt_bbox(markers_example()) == (40, 10, 63, 123)

    def test_contains_all_markers(self):
        rng = np.random.default_rng(13)
        for _ in range(25):
            pts = {name: (float(rng.uniform(0, 100)), float(rng.uniform(20, 80)))
                   for name in ("neck_left", "neck_right", "shoulder_left", "shoulder_right",
                                "waist_left", "waist_right")}
            head = (float(rng.uniform(0, 100)), 5.0)
            toes = {
                "toe_left": (float(rng.uniform(0, 100)), float(rng.uniform(90, 120))),
                "toe_right": (float(rng.uniform(0, 100)), float(rng.uniform(90, 120))),
            }
            ms = MarkerSet(frame_id=0, subject_id="s", head_top=head, **pts, **toes)
            x0, y0, x1, y1 = gt_bbox(ms)
            for u, v in ms.points():
                assert x0 <= u < x1
            assert y0 == head[1]
            assert y1 > max(toes["toe_left"][1], toes["toe_right"][1])

    def test_coincident_markers_degenerate(self):
        p = (10.0, 10.0)
        ms = MarkerSet(frame_id=0, subject_id="s", head_top=p, neck_left=p, neck_right=p,
                       shoulder_left=p, shoulder_right=p, waist_left=p, waist_right=p,
                       toe_left=p, toe_right=p)
        with pytest.raises(MetricsError):
            gt_bbox(ms)

    def test_symmetric_pose_symmetric_box(self):
        ms = markers_example()
        x0, _, x1, _ = gt_bbox(ms)
        # shoulders symmetric around u = 51: box tracks the extremes
        assert x0 == 40 and x1 == 63

    def test_non_finite_marker_rejected(self):
        with pytest.raises(MetricsError):
            MarkerSet(frame_id=0, subject_id="s", head_top=(float("nan"), 1),
                      neck_left=(0, 0), neck_right=(0, 0), shoulder_left=(0, 0),
                      shoulder_right=(0, 0), waist_left=(0, 0), waist_right=(0, 0),
                      toe_left=(0, 0), toe_right=(0, 0))


class TestIoU:
    def test_identical(self):
        assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0

    def test_touching_edges_are_disjoint(self):
        assert iou((0, 0, 10, 10), (10, 0, 20, 10)) == 0.0

    def test_hand_computed_half_overlap(self):
        # intersection 5x10 = 50, union 100 + 100 - 50 = 150
        assert iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(50 / 150)

    def test_pixel_counting_oracle_exact(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            ax0, ay0 = rng.integers(0, 30, 2)
            bx0, by0 = rng.integers(0, 30, 2)
            a = (int(ax0), int(ay0), int(ax0 + rng.integers(1, 20)), int(ay0 + rng.integers(1, 20)))
            b = (int(bx0), int(by0), int(bx0 + rng.integers(1, 20)), int(by0 + rng.integers(1, 20)))
            assert iou(a, b) == iou_pixel_count(a, b)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            a = tuple(map(float, (rng.uniform(0, 10), rng.uniform(0, 10),
                                  rng.uniform(10, 20), rng.uniform(10, 20))))
            b = tuple(map(float, (rng.uniform(0, 10), rng.uniform(0, 10),
                                  rng.uniform(10, 20), rng.uniform(10, 20))))
            assert iou(a, b) == iou(b, a)
            assert 0.0 <= iou(a, b) <= 1.0
            assert iou(a, a) == 1.0


class TestFrameCorrect:
    def test_high_overlap_correct(self):
        assert frame_correct(result_with((0, 0, 10, 10)), (0, 0, 10, 11)) is True

    def test_multiple_survivors_never_correct(self):
        result = result_with((0, 0, 10, 10), extra=1)
        assert frame_correct(result, (0, 0, 10, 10)) is False

    def test_zero_overlap_incorrect(self):
        assert frame_correct(result_with((0, 0, 10, 10)), (50, 50, 60, 60)) is False

    def test_tau_respected(self):
        result = result_with((0, 0, 10, 10))
        gt = (5, 0, 15, 10)  # IoU = 1/3
        assert frame_correct(result, gt, tau=0.3) is True
        assert frame_correct(result, gt, tau=0.34) is False

    def test_evaluate_frame_iou_zero_when_ambiguous(self):
        fe = evaluate_frame(result_with((0, 0, 10, 10), extra=1), (0, 0, 10, 10))
        assert fe.iou == 0.0 and fe.correct is False


class TestTpRate:
    def test_zero_of_fifty(self):
        assert tp_rate([False] * 50) == 0.0

    def test_all_correct(self):
        assert tp_rate([True] * 7) == 100.0

    def test_five_of_eight(self):
        assert tp_rate([True] * 5 + [False] * 3) == 62.5

    def test_reorder_invariant(self):
        flags = [True, False, True, True, False]
        assert tp_rate(flags) == tp_rate(list(reversed(flags)))

    def test_zero_frames_undefined(self):
        with pytest.raises(MetricsError):
            tp_rate([])


class TestAggregate:
    def test_single_subject_all_correct(self):
        frames = [FrameEval(i, True, 1.0) for i in range(5)]
        report = aggregate({"s0": frames}, init_skip=0)
        assert report.per_subject[0].tp_rate_percent == 100.0
        assert report.corpus.avg_iou_correct == 1.0
        assert report.corpus.frac_iou_ge_threshold == 1.0
        assert report.corpus.subjects_retrieved == 1

    def test_two_subjects_mean(self):
        report = aggregate(
            {
                "a": [FrameEval(0, True, 1.0)],
                "b": [FrameEval(0, False, 0.0)],
            },
            init_skip=0,
        )
        assert report.corpus.avg_tp_percent == 50.0
        assert report.corpus.subjects_retrieved == 1

    def test_three_subject_hand_fixture(self):
        frames = {
            "a": [FrameEval(0, True, 0.8), FrameEval(1, True, 0.6), FrameEval(2, False, 0.2)],
            "b": [FrameEval(0, False, 0.0), FrameEval(1, False, 0.3)],
            "c": [FrameEval(0, True, 1.0)],
        }
        report = aggregate(frames, iou_threshold=0.4, init_skip=0)
        by_id = {s.subject_id: s for s in report.per_subject}
        assert by_id["a"].tp_rate_percent == pytest.approx(100.0 * 2 / 3, abs=1e-12)
        assert by_id["a"].mean_iou == pytest.approx((0.8 + 0.6 + 0.2) / 3, abs=1e-12)
        assert by_id["b"].tp_rate_percent == 0.0
        assert by_id["c"].frames_evaluated == 1
        c = report.corpus
        assert c.subjects_retrieved == 2
        assert c.avg_tp_percent == pytest.approx((100.0 * 2 / 3 + 0.0 + 100.0) / 3, abs=1e-12)
        assert c.avg_iou_correct == pytest.approx((0.8 + 0.6 + 1.0) / 3, abs=1e-12)
        assert c.avg_iou_all == pytest.approx((0.8 + 0.6 + 0.2 + 0.0 + 0.3 + 1.0) / 6, abs=1e-12)
        assert c.frac_iou_ge_threshold == pytest.approx(3 / 6, abs=1e-12)

    def test_init_skip_window(self):
        frames = [FrameEval(i, i >= 30, 1.0 if i >= 30 else 0.0) for i in range(40)]
        report = aggregate({"s": frames}, init_skip=30)
        assert report.per_subject[0].frames_evaluated == 10
        assert report.per_subject[0].tp_rate_percent == 100.0

    def test_init_skip_sorts_by_frame_id(self):
        frames = [FrameEval(1, True, 1.0), FrameEval(0, False, 0.0)]
        report = aggregate({"s": frames}, init_skip=1)
        # frame 0 is the init window regardless of listing order
        assert report.per_subject[0].tp_rate_percent == 100.0

    def test_unevaluable_subject_excluded(self, caplog):
        frames = {
            "a": [FrameEval(i, True, 1.0) for i in range(40)],
            "b": [FrameEval(0, True, 1.0)],  # swallowed by the init window
        }
        with caplog.at_level("WARNING", logger="softbio.metrics"):
            report = aggregate(frames, init_skip=30)
        assert [s.subject_id for s in report.per_subject] == ["a"]
        assert any("excluded" in r.message for r in caplog.records)

    def test_no_subjects_rejected(self):
        with pytest.raises(MetricsError):
            aggregate({})
        with pytest.raises(MetricsError):
            aggregate({"s": [FrameEval(0, True, 1.0)]}, init_skip=5)

    def test_report_dict_shape(self):
        report = aggregate({"s": [FrameEval(0, True, 0.9)]}, init_skip=0)
        d = report.to_dict()
        assert set(d) == {"per_subject", "corpus"}
        assert set(d["corpus"]) == {
            "subjects_retrieved",
            "avg_tp_percent",
            "avg_iou_correct",
            "avg_iou_all",
            "frac_iou_ge_threshold",
            "iou_threshold",
        }
        assert set(d["per_subject"][0]) == {
            "subject_id",
            "tp_rate_percent",
            "mean_iou",
            "frames_evaluated",
        }
