"""Exception hierarchy.

Every failure raised by the library derives from :class:`MapPoseError`.
Input/format problems derive from :class:`InputError` and stage failures
of the estimation pipeline derive from :class:`PipelineError`; the CLI maps
them to exit codes 2 and 3 respectively.
"""


class MapPoseError(Exception):
    """Base class for all library errors."""

    reason = "error"


class InputError(MapPoseError):
    reason = "input_error"


class PipelineError(MapPoseError):
    reason = "pipeline_error"


# geometry
class ParallelDegenerate(PipelineError):
    reason = "parallel_degenerate"


class DegenerateSegment(InputError):
    reason = "degenerate_segment"


# map model
class InvalidPolygon(InputError):
    reason = "invalid_polygon"


class CameraInsideBuilding(PipelineError):
    reason = "camera_inside_building"


# orientation
class InsufficientSegments(PipelineError):
    reason = "insufficient_segments"


class NoConsensus(PipelineError):
    reason = "no_consensus"


class NoRealRoot(PipelineError):
    reason = "no_real_root"


class BothRootsRejected(PipelineError):
    reason = "both_roots_rejected"


class NoFacadeAssignments(PipelineError):
    reason = "no_facade_assignments"


# translation
class DegenerateHomography(PipelineError):
    reason = "degenerate_homography"


class DimensionMismatch(InputError):
    reason = "dimension_mismatch"


class DegenerateDistribution(PipelineError):
    reason = "degenerate_distribution"


class SingularSystem(PipelineError):
    reason = "singular_system"


# alignment
class EmptyHypothesisSet(PipelineError):
    reason = "empty_hypothesis_set"


class AllStartsFailed(PipelineError):
    reason = "all_starts_failed"


# synth
class Unsatisfiable(PipelineError):
    reason = "unsatisfiable"


# io
class MalformedXml(InputError):
    reason = "malformed_xml"


class DanglingNodeRef(InputError):
    reason = "dangling_node_ref"


class EmptyMap(InputError):
    reason = "empty_map"


class FormatError(InputError):
    reason = "format_error"
