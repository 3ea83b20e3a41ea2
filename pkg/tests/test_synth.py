"""Synthetic-scene oracle tests: rendering exactness, determinism, truth
consistency, and the perturbation harness."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from conftest import tilted_camera

from softbio import synth
from softbio.dataio import calibration_to_dict, load_bundle, load_mask
from softbio.errors import SceneError
from softbio.geometry import HeightBias, ImagePoint, estimate_height
from softbio.maskops import feet_point, head_point, mask_bbox
from softbio.synth import (
    FrameSpec,
    PersonSpec,
    SceneSpec,
    generate_bundle,
    generate_scene,
    parse_scene_spec,
    perturb,
    sample_envelope_camera,
    sample_visible_placement,
)


@pytest.fixture(scope="module")
def camera():
    return tilted_camera(0.55, 430.0, focal=900.0, camera_id="cam0")


def person(subject_id="p0", height=170.0, position=(30.0, 620.0),
           torso="red", leg="blue", gender="female", width=50.0) -> PersonSpec:
    return PersonSpec(
        subject_id=subject_id,
        height_cm=height,
        position=position,
        torso_color=torso,
        leg_color=leg,
        gender=gender,
        width_cm=width,
    )


def render_one(camera, palette, p=None):
    p = p if p is not None else person()
    return generate_scene(camera, FrameSpec(frame_id=0, persons=(p,)), (640, 480), palette), p


def dir_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


class TestSceneSpecParsing:
    def test_seed_mandatory(self, palette):
        with pytest.raises(SceneError, match="seed"):
            parse_scene_spec({"image_size": [64, 64], "frames": []}, palette)

    def test_height_envelope_enforced(self, palette):
        with pytest.raises(SceneError, match="height"):
            person(height=230.0)

    def test_unknown_color_rejected(self, palette):
        spec = {
            "seed": 1,
            "image_size": [64, 64],
            "frames": [{"frame_id": 0, "persons": [
                {"height_cm": 170, "position": [0, 500], "torso_color": "chartreuse",
                 "leg_color": "blue", "gender": "male"}]}],
        }
        with pytest.raises(SceneError, match="chartreuse"):
            parse_scene_spec(spec, palette)

    def test_bad_gender_rejected(self):
        with pytest.raises(SceneError, match="gender"):
            person(gender="unknown")

    def test_frame_order_enforced(self, palette):
        spec = {
            "seed": 1,
            "image_size": [64, 64],
            "frames": [{"frame_id": 1, "persons": []}, {"frame_id": 0, "persons": []}],
        }
        with pytest.raises(SceneError, match="increasing"):
            parse_scene_spec(spec, palette)

    def test_explicit_camera_parsed(self, palette, camera):
        spec = parse_scene_spec(
            {"seed": 5, "image_size": [640, 480], "camera": calibration_to_dict(camera),
             "frames": [{"frame_id": 0, "persons": []}]},
            palette,
        )
        assert spec.camera.camera_id == "cam0"


class TestEnvelopeCamera:
    def test_within_envelope(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            calib = sample_envelope_camera(rng, (640, 480))
            center = calib.camera_center()
            assert 250.0 <= center.z <= 600.0
            assert 400.0 <= calib.focal[0] <= 1200.0
            assert calib.principal == (320.0, 240.0)

    def test_reproducible(self):
        a = sample_envelope_camera(np.random.default_rng(9), (640, 480))
        b = sample_envelope_camera(np.random.default_rng(9), (640, 480))
        np.testing.assert_array_equal(a.rotation, b.rotation)
        assert a.focal == b.focal


class TestRendering:
    def test_mask_head_feet_near_truth(self, camera, palette):
        render, p = render_one(camera, palette)
        truth = render.truths[0]
        mask = render.masks[0]
        head = head_point(mask)
        feet = feet_point(mask)
        assert abs(head.u - truth.head[0]) <= 1.0
        assert abs(head.v - truth.head[1]) <= 1.0
        assert abs(feet.u - truth.feet[0]) <= 1.0
        assert abs(feet.v - truth.feet[1]) <= 1.0

    def test_band_colors_exact(self, camera, palette):
        render, p = render_one(camera, palette)
        mask = render.masks[0]
        frame = render.frame
        rows, cols = np.nonzero(mask.bits)
        colors = {tuple(c) for c in frame[rows, cols]}
        # hard edges: only the three band colors appear inside the mask
        assert colors == {
            palette.srgb_of("red"),
            palette.srgb_of("blue"),
            synth.SKIN_SRGB,
        }

    def test_torso_band_is_torso_color(self, camera, palette):
        # sample the rendered frame in the middle of the torso band
        render, p = render_one(camera, palette)
        mask, truth = render.masks[0], render.truths[0]
        x0, y0, x1, y1 = mask_bbox(mask)
        mid_col = (x0 + x1) // 2
        # torso band occupies [0.2, 0.5) of the pixel extent from the top
        torso_row = int(y0 + 0.35 * (y1 - y0))
        assert mask.bits[torso_row, mid_col]
        assert tuple(render.frame[torso_row, mid_col]) == palette.srgb_of("red")
        leg_row = int(y0 + 0.75 * (y1 - y0))
        assert tuple(render.frame[leg_row, mid_col]) == palette.srgb_of("blue")

    def test_gt_box_contains_mask_bbox(self, camera, palette):
        render, p = render_one(camera, palette)
        gx0, gy0, gx1, gy1 = render.truths[0].gt_box
        mx0, my0, mx1, my1 = mask_bbox(render.masks[0])
        assert mx0 >= gx0 - 1 and my0 >= gy0 - 1
        assert mx1 <= gx1 + 1 and my1 <= gy1 + 1

    def test_background_untouched_outside_masks(self, camera, palette):
        render, p = render_one(camera, palette)
        outside = ~render.masks[0].bits
        assert (render.frame[outside] == synth.BACKGROUND_SRGB).all()

    def test_height_recovery_within_1cm(self, camera, palette):
        render, p = render_one(camera, palette)
        mask = render.masks[0]
        est = estimate_height(camera, head_point(mask), feet_point(mask), HeightBias({}))
        assert abs(est.height_cm - p.height_cm) <= 1.0

    def test_empty_persons_background_only(self, camera, palette):
        render = generate_scene(camera, FrameSpec(frame_id=0, persons=()), (640, 480), palette)
        assert (render.frame == synth.BACKGROUND_SRGB).all()
        assert render.masks == () and render.truths == ()
        assert render.record.detections == ()

    def test_out_of_frustum_rejected(self, camera, palette):
        huge = person(position=(4000.0, 500.0))  # far off to the side
        with pytest.raises(SceneError, match="frustum"):
            generate_scene(camera, FrameSpec(frame_id=0, persons=(huge,)), (640, 480), palette)

    def test_occlusion_painter_order(self, camera, palette):
        # two persons on the same ray: the nearer one owns the shared pixels
        near = person("near", position=(0.0, 520.0), torso="red", leg="blue")
        far = person("far", position=(0.0, 900.0), torso="green", leg="black")
        render = generate_scene(camera, FrameSpec(frame_id=0, persons=(near, far)), (640, 480), palette)
        near_mask = render.masks[0].bits
        overlap_colors = {tuple(c) for c in render.frame[near_mask]}
        assert palette.srgb_of("green") not in overlap_colors  # far person hidden behind near
        assert palette.srgb_of("red") in overlap_colors

    def test_external_gender_scores_attached(self, camera, palette):
        render, p = render_one(camera, palette)
        det = render.record.detections[0]
        assert det.scores.gender_scores == {"male": 0.0, "female": 1.0}
        assert det.scores.provenance == "external"


class TestBundleGeneration:
    def _spec(self, camera, n_frames=2, seed=33):
        frames = tuple(
            FrameSpec(frame_id=i, persons=(person(position=(30.0 + 2 * i, 620.0)),))
            for i in range(n_frames)
        )
        return SceneSpec(image_size=(640, 480), seed=seed, frames=frames, camera=camera)

    def test_bundle_loads_and_matches(self, camera, palette, tmp_path):
        truth = generate_bundle(self._spec(camera), tmp_path / "b", palette)
        bundle = load_bundle(tmp_path / "b")
        assert len(bundle.manifest.frames) == 2
        assert set(bundle.markers) == {"p0"}
        frame = bundle.manifest.frames[0]
        mask = load_mask(bundle, frame, frame.detections[0])
        assert mask.bits.any()
        # the sidecar matches the returned truth
        doc = json.loads((tmp_path / "b" / "truth.json").read_text())
        assert doc["camera_id"] == "cam0"
        assert doc["frames"][0]["persons"][0]["height_cm"] == 170.0
        assert truth.truths[0][0].height_cm == 170.0

    def test_byte_identical_for_same_seed(self, camera, palette, tmp_path):
        generate_bundle(self._spec(camera), tmp_path / "b1", palette)
        generate_bundle(self._spec(camera), tmp_path / "b2", palette)
        assert dir_digest(tmp_path / "b1") == dir_digest(tmp_path / "b2")

    def test_random_camera_seed_changes_output(self, palette, tmp_path):
        # sampled cameras differ across seeds but stay reproducible per seed
        pos = None
        for seed in (1, 2):
            rng = np.random.default_rng(seed)
            calib = sample_envelope_camera(rng, (640, 480))
            pos = sample_visible_placement(calib, (640, 480), rng, 170.0, min_pixel_height=100)
            assert pos is not None

    def test_empty_frames_bundle(self, camera, palette, tmp_path):
        spec = SceneSpec(image_size=(640, 480), seed=1, frames=(FrameSpec(0, ()),), camera=camera)
        generate_bundle(spec, tmp_path / "b", palette)
        bundle = load_bundle(tmp_path / "b")
        assert bundle.manifest.frames[0].detections == ()
        assert bundle.markers is None  # no persons, no markers.csv


class TestPerturb:
    def test_zero_sigma_identity(self):
        pts = [ImagePoint(10.5, 20.25, distorted=True), ImagePoint(-3.0, 7.0)]
        out = perturb(pts, 0.0, seed=4)
        assert [(p.u, p.v, p.distorted) for p in out] == [(10.5, 20.25, True), (-3.0, 7.0, False)]

    def test_sample_std_within_5_percent(self):
        pts = [ImagePoint(0.0, 0.0)] * 10000
        out = perturb(pts, 1.0, seed=77)
        du = np.array([p.u for p in out])
        dv = np.array([p.v for p in out])
        assert abs(du.std() - 1.0) <= 0.05
        assert abs(dv.std() - 1.0) <= 0.05

    def test_fixed_seed_reproducible(self):
        pts = [ImagePoint(1.0, 2.0), ImagePoint(3.0, 4.0)]
        a = perturb(pts, 2.0, seed=5)
        b = perturb(pts, 2.0, seed=5)
        assert [(p.u, p.v) for p in a] == [(p.u, p.v) for p in b]

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            perturb([ImagePoint(0, 0)], -1.0, seed=0)


class TestPlacement:
    def test_min_pixel_height_honored(self):
        rng = np.random.default_rng(12)
        calib = sample_envelope_camera(rng, (640, 480))
        pos = sample_visible_placement(calib, (640, 480), rng, 180.0, min_pixel_height=150.0)
        if pos is None:
            pytest.skip("camera draw cannot fit a 150 px person; covered by other seeds")
        p = person(position=pos, height=180.0)
        assert synth.person_in_frustum(calib, (640, 480), p)
