"""Exception hierarchy shared by all pipeline modules."""


class UavTrackError(Exception):
    """Base class for all library errors. Carries a machine-readable code."""

    code = "error"


class PointAtInfinity(UavTrackError):
    """Projective denominator vanished while warping a point."""

    code = "point_at_infinity"


class GaugeSingular(UavTrackError):
    """Homography cannot be normalized because h33 is (near) zero."""

    code = "gauge_singular"


class TooSmall(UavTrackError):
    """Image too small for the requested pyramid depth."""

    code = "too_small"


class GridTooDense(UavTrackError):
    """Sampling grid violates the minimum spacing or point count."""

    code = "grid_too_dense"


class InsufficientCorrespondences(UavTrackError):
    """Not enough valid correspondences for the requested fit."""

    code = "insufficient_correspondences"


class DegenerateConfiguration(UavTrackError):
    """Point configuration is rank-deficient (e.g. collinear)."""

    code = "degenerate_configuration"


class RankDeficient(UavTrackError):
    """Normal equations singular beyond the fixed gauge."""

    code = "rank_deficient"


class BoxOutOfFrame(UavTrackError):
    """Bounding box leaves the frame or is below the minimum area."""

    code = "box_out_of_frame"


class SearchWindowEmpty(UavTrackError):
    """Search window cannot be recovered by clamping to the frame."""

    code = "search_window_empty"


class MissingFrame(UavTrackError):
    """Trace has no record for the requested frame index."""

    code = "missing_frame"


class ProtocolError(UavTrackError):
    """External tracker sent a malformed or out-of-contract message."""

    code = "protocol_error"


class TrackerTimeout(UavTrackError):
    """External tracker did not answer within the configured timeout."""

    code = "timeout"


class ProcessExited(UavTrackError):
    """External tracker process terminated unexpectedly."""

    code = "process_exited"


class InitMissing(UavTrackError):
    """Sequence has no ground truth at frame 0."""

    code = "init_missing"


# Sequence loading and protocol running surface the same defect under
# different names; keep both importable.
MissingInit = InitMissing


class NoEvaluableFrames(UavTrackError):
    """No annotated frames available for the metric."""

    code = "no_evaluable_frames"


class EmptySequence(UavTrackError):
    """Metric asked for on a zero-length sequence."""

    code = "empty_sequence"


class NoGroundTruth(UavTrackError):
    """No annotated frame inside the occlusion event window."""

    code = "no_ground_truth"


class DegenerateShape(UavTrackError):
    """Occluder shape rasterized to an empty mask."""

    code = "degenerate_shape"


class SizeMismatch(UavTrackError):
    """Mask and frame dimensions differ."""

    code = "size_mismatch"


class ParseError(UavTrackError):
    """Malformed annotation, trace or manifest content."""

    code = "parse_error"


class InconsistentLength(UavTrackError):
    """Frame count and dense annotation count disagree."""

    code = "inconsistent_length"


class SpecInvalid(UavTrackError):
    """Synthetic sequence specification is not renderable."""

    code = "spec_invalid"


class ConfigError(UavTrackError):
    """Configuration file violates the schema (unknown key, bad value)."""

    code = "config_error"
