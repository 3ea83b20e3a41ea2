"""Batch command-line surface: retrieve, eval, synth, calib-check.

All diagnostics go to standard error; data lands in files only.  Exit
codes: 0 success, 1 load/evaluation-input error, 2 query/scene-spec error,
3 calibration self-test failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attributes import DEFAULT_SECOND_COLOR_MIN_SHARE, load_palette
from .cascade import parse_query
from .dataio import (
    load_bundle,
    load_frame_image,
    load_markers,
    read_results,
    write_overlay,
    write_report,
    write_results,
)
from .errors import BundleError, CalibrationError, MetricsError, PipelineError, QueryError, SceneError
from .geometry import (
    HeightBias,
    ImagePoint,
    WorldPoint,
    backproject_ground,
    build_projection,
    distort,
    estimate_height,
    project,
    undistort,
)
from .metrics import DEFAULT_CORRECTNESS_TAU, DEFAULT_INIT_SKIP, DEFAULT_IOU_THRESHOLD, gt_bbox
from .pipeline import evaluate_results, run_retrieval
from .synth import generate_bundle, parse_scene_spec, sample_visible_placement

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_LOAD_ERROR = 1
EXIT_SPEC_ERROR = 2
EXIT_CALIB_FAILED = 3

ROUNDTRIP_TOL_PX = 1e-6
HEIGHT_REL_TOL = 1e-6


def _print_config(name: str, config: dict) -> None:
    print(f"config {name}: {json.dumps(config, sort_keys=True)}", file=sys.stderr)


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_retrieve(args) -> int:
    config = {
        "subcommand": "retrieve",
        "bundle": args.bundle,
        "query": args.query,
        "out": args.out,
        "overlay_dir": args.overlay_dir,
        "tau": args.tau,
        "second_color_min_share": args.second_color_min_share,
        "workers": args.workers,
    }
    _print_config("retrieve", config)
    try:
        bundle = load_bundle(args.bundle)
    except BundleError as exc:
        return _fail(str(exc), EXIT_LOAD_ERROR)
    try:
        query = parse_query(args.query, bundle.palette)
    except QueryError as exc:
        return _fail(str(exc), EXIT_SPEC_ERROR)
    results = run_retrieval(
        bundle, query, workers=args.workers, second_min_share=args.second_color_min_share
    )
    write_results(results, args.out)
    if args.overlay_dir is not None:
        overlay_dir = Path(args.overlay_dir)
        for frame, result in zip(bundle.manifest.frames, results):
            gt = None
            if bundle.markers:
                boxes = [
                    gt_bbox(per_frame[frame.frame_id])
                    for per_frame in bundle.markers.values()
                    if frame.frame_id in per_frame
                ]
                gt = boxes[0] if boxes else None
            img = load_frame_image(bundle.root / frame.frame_image_path)
            write_overlay(img, result, gt, overlay_dir / f"f{frame.frame_id:06d}.png")
    print(f"retrieved {len(results)} frames -> {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = {
        "subcommand": "eval",
        "results": args.results,
        "markers": args.markers,
        "out": args.out,
        "tau": args.tau,
        "iou_threshold": args.iou_threshold,
        "init_skip": args.init_skip,
    }
    _print_config("eval", config)
    try:
        records = read_results(args.results)
        markers = load_markers(args.markers)
        report = evaluate_results(
            records,
            markers,
            tau=args.tau,
            iou_threshold=args.iou_threshold,
            init_skip=args.init_skip,
        )
    except (BundleError, MetricsError) as exc:
        return _fail(str(exc), EXIT_LOAD_ERROR)
    write_report(report.to_dict(), args.out)
    c = report.corpus
    print(
        f"subjects={len(report.per_subject)} retrieved={c.subjects_retrieved} "
        f"avg_tp={c.avg_tp_percent:.1f}% avg_iou_correct={c.avg_iou_correct:.3f} "
        f"avg_iou_all={c.avg_iou_all:.3f} "
        f"frac_iou_ge_{c.iou_threshold:g}={c.frac_iou_ge_threshold:.3f}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_synth(args) -> int:
    config = {"subcommand": "synth", "spec": args.spec, "out": args.out, "seed": args.seed}
    _print_config("synth", config)
    try:
        palette = load_palette()
        spec = parse_scene_spec(args.spec, palette)
        if args.seed is not None:
            spec = dataclasses.replace(spec, seed=args.seed)
        generate_bundle(spec, args.out, palette)
    except SceneError as exc:
        return _fail(str(exc), EXIT_SPEC_ERROR)
    print(f"bundle written to {args.out}", file=sys.stderr)
    return EXIT_OK


def _check_camera(calib, image_size, rng) -> dict:
    """Round-trip and synthetic-height property sweep for one camera."""
    C = build_projection(calib)
    center = calib.camera_center()
    w, h = image_size
    max_rt = 0.0
    samples = 0
    for u in np.linspace(2.0, w - 2.0, 12):
        for v in np.linspace(2.0, h - 2.0, 12):
            p = ImagePoint(float(u), float(v), distorted=False)
            try:
                ground = backproject_ground(p, C)
                if np.hypot(ground.x - center.x, ground.y - center.y) > 1e5:
                    continue  # near-horizon pixel, ground point over 1 km out
                back = project(ground, C)
            except PipelineError:
                continue
            max_rt = max(max_rt, float(np.hypot(back.u - p.u, back.v - p.v)))
            samples += 1

    max_rel = 0.0
    heights = 0
    for _ in range(40):
        height = rng.uniform(140.0, 200.0)
        pos = sample_visible_placement(calib, image_size, rng, height, max_tries=50)
        if pos is None:
            continue
        head = project(WorldPoint(pos[0], pos[1], height), C)
        feet = project(WorldPoint(pos[0], pos[1], 0.0), C)
        if any(k != 0.0 for k in calib.radial):
            head = distort(head, calib)
            feet = distort(feet, calib)
        else:
            head = ImagePoint(head.u, head.v, distorted=True)
            feet = ImagePoint(feet.u, feet.v, distorted=True)
        est = estimate_height(calib, head, feet, HeightBias({}))
        max_rel = max(max_rel, abs(est.height_cm - height) / height)
        heights += 1

    undist_identity = None
    if all(k == 0.0 for k in calib.radial):
        probe = ImagePoint(w / 3.0, h / 3.0, distorted=True)
        out = undistort(probe, calib)
        undist_identity = out.u == probe.u and out.v == probe.v
    return {
        "camera_id": calib.camera_id,
        "roundtrip_samples": samples,
        "max_roundtrip_px": max_rt,
        "height_samples": heights,
        "max_height_rel_err": max_rel,
        "undistort_identity": undist_identity,
        "ok": samples > 0
        and heights > 0
        and max_rt <= ROUNDTRIP_TOL_PX
        and max_rel <= HEIGHT_REL_TOL
        and undist_identity is not False,
    }


def cmd_calib_check(args) -> int:
    config = {"subcommand": "calib-check", "bundle": args.bundle}
    _print_config("calib-check", config)
    try:
        bundle = load_bundle(args.bundle)
    except CalibrationError as exc:
        # invalid calibration is exactly what this subcommand diagnoses
        return _fail(str(exc), EXIT_CALIB_FAILED)
    except BundleError as exc:
        return _fail(str(exc), EXIT_LOAD_ERROR)
    w, h = 640, 480
    for frame in bundle.manifest.frames:
        # probe grid scaled to the actual image size of the first frame
        img = load_frame_image(bundle.root / frame.frame_image_path)
        h, w = img.shape[:2]
        break
    all_ok = True
    for camera_id in sorted(bundle.calibrations):
        rng = np.random.default_rng(0)
        stats = _check_camera(bundle.calibrations[camera_id], (w, h), rng)
        print(
            f"{camera_id}: roundtrip max {stats['max_roundtrip_px']:.2e} px "
            f"({stats['roundtrip_samples']} pts), height max rel err "
            f"{stats['max_height_rel_err']:.2e} ({stats['height_samples']} persons), "
            f"undistort identity: {stats['undistort_identity']} -> "
            f"{'ok' if stats['ok'] else 'FAIL'}",
            file=sys.stderr,
        )
        all_ok &= stats["ok"]
    return EXIT_OK if all_ok else EXIT_CALIB_FAILED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--version", action="version", version=__version__)

    parser = argparse.ArgumentParser(
        prog="softbio",
        description="Person retrieval from semantic queries over segmentation masks",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("retrieve", parents=[common], help="run the filter cascade over a bundle")
    p.add_argument("--bundle", required=True, help="bundle root directory")
    p.add_argument("--query", required=True, help="semantic query JSON file")
    p.add_argument("--out", required=True, help="output results JSONL path")
    p.add_argument("--overlay-dir", default=None, help="write annotated overlay PNGs here")
    p.add_argument("--tau", type=float, default=DEFAULT_CORRECTNESS_TAU,
                   help="correctness IoU threshold (recorded; applied by eval)")
    p.add_argument("--second-color-min-share", type=float, default=DEFAULT_SECOND_COLOR_MIN_SHARE)
    p.add_argument("--workers", type=int, default=0, help="worker threads (0 = all cores)")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", parents=[common], help="score a results stream against markers")
    p.add_argument("--results", required=True, help="results JSONL from retrieve")
    p.add_argument("--markers", required=True, help="markers CSV ground truth")
    p.add_argument("--out", required=True, help="output report JSON path")
    p.add_argument("--tau", type=float, default=DEFAULT_CORRECTNESS_TAU,
                   help="IoU threshold for per-frame correctness")
    p.add_argument("--iou-threshold", type=float, default=DEFAULT_IOU_THRESHOLD,
                   help="threshold for the frac_iou_ge_threshold statistic")
    p.add_argument("--init-skip", type=int, default=DEFAULT_INIT_SKIP,
                   help="initialization frames to skip per subject")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic bundle")
    p.add_argument("--spec", required=True, help="scene spec JSON file")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec's seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calib-check", parents=[common], help="self-test bundle calibrations")
    p.add_argument("--bundle", required=True, help="bundle root directory")
    p.set_defaults(func=cmd_calib_check)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", None) == 0:
        args.workers = os.cpu_count() or 1
    try:
        return args.func(args)
    except PipelineError as exc:
        return _fail(str(exc), EXIT_LOAD_ERROR)


if __name__ == "__main__":
    sys.exit(main())
