"""Deterministic person retrieval from semantic queries (height band, torso
color(s), gender, optional leg color) over externally supplied segmentation
masks, with calibrated single-view height estimation, a culture-color
classifier, a linear filter cascade, an evaluation harness, and a
synthetic-scene oracle used to verify the whole chain.
"""

__version__ = "0.1.0"

from .attributes import (
    AttributeScores,
    CultureColorPalette,
    classify_color,
    classify_gender,
    load_palette,
    merge_scores,
    second_color,
)
from .cascade import Candidate, RetrievalResult, SemanticQuery, parse_query, retrieve
from .errors import PipelineError
from .geometry import (
    CameraCalibration,
    HeightBias,
    HeightEstimate,
    ImagePoint,
    ProjectionMatrix,
    WorldPoint,
    backproject_ground,
    build_projection,
    compute_bias,
    estimate_height,
    project,
    solve_head_height,
    undistort,
)
from .maskops import Mask, body_region, decode_mask, extract_patch, feet_point, head_point, mask_bbox
from .metrics import EvaluationReport, MarkerSet, aggregate, frame_correct, gt_bbox, iou, tp_rate
from .dataio import SequenceBundle, load_bundle, write_results
from .pipeline import evaluate_results, run_retrieval
from .synth import SceneSpec, generate_bundle, generate_scene, parse_scene_spec, perturb

__all__ = [
    "__version__",
    "AttributeScores",
    "CultureColorPalette",
    "classify_color",
    "classify_gender",
    "load_palette",
    "merge_scores",
    "second_color",
    "Candidate",
    "RetrievalResult",
    "SemanticQuery",
    "parse_query",
    "retrieve",
    "PipelineError",
    "CameraCalibration",
    "HeightBias",
    "HeightEstimate",
    "ImagePoint",
    "ProjectionMatrix",
    "WorldPoint",
    "backproject_ground",
    "build_projection",
    "compute_bias",
    "estimate_height",
    "project",
    "solve_head_height",
    "undistort",
    "Mask",
    "body_region",
    "decode_mask",
    "extract_patch",
    "feet_point",
    "head_point",
    "mask_bbox",
    "EvaluationReport",
    "MarkerSet",
    "aggregate",
    "frame_correct",
    "gt_bbox",
    "iou",
    "tp_rate",
    "SequenceBundle",
    "load_bundle",
    "write_results",
    "evaluate_results",
    "run_retrieval",
    "SceneSpec",
    "generate_bundle",
    "generate_scene",
    "parse_scene_spec",
    "perturb",
]
