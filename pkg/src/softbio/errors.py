"""Exception types shared across the retrieval pipeline.

Every error this package raises deliberately derives from
:class:`PipelineError`, so batch drivers can distinguish pipeline
failures (bad data, degenerate geometry) from programming errors.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class CalibrationError(PipelineError):
    """Camera calibration violates its invariants (non-orthonormal rotation,
    non-positive focal length, unsupported radial coefficient count)."""


class GeometryError(PipelineError):
    """Degenerate projection geometry: point on the principal plane, singular
    ground-plane homography, or height unobservable from the given rays."""


class MaskError(PipelineError):
    """Malformed mask payload or a mask with no set pixels."""


class RegionError(PipelineError):
    """Body region cannot be extracted (mask too short, empty patch)."""


class PaletteError(PipelineError):
    """Invalid culture-color palette (duplicates, too few or coincident entries)."""


class ScoreError(PipelineError):
    """Attribute score map violates the probability contract."""


class QueryError(PipelineError):
    """Semantic query file is malformed or references unknown vocabulary."""


class BundleError(PipelineError):
    """Dataset bundle fails validation; the message names the offending
    file and record."""


class MetricsError(PipelineError):
    """Evaluation input is unusable (no frames, degenerate ground truth)."""


class SceneError(PipelineError):
    """Synthetic scene specification is invalid or unrenderable
    (person outside the camera frustum)."""
