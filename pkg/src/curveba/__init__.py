"""Curve-based structure from motion with composite cubic Bezier splines."""

from .camera import Intrinsics, Pose, Similarity, backproject, pose_retract, project, sim3_align
from .config import PipelineConfig
from .curves import (
    BezierSegment,
    PolybezierCurve,
    PolybezierParams,
    control_points_from_params,
    direction_from_angles,
    evaluate_bezier,
    sample_segment,
)
from .edges import EdgeImage, NNField, PixelChain, build_nn_field, chain_edges, extract_edges, nn_lookup

__version__ = "0.1.0"

__all__ = [
    "BezierSegment",
    "EdgeImage",
    "Intrinsics",
    "NNField",
    "PipelineConfig",
    "PixelChain",
    "PolybezierCurve",
    "PolybezierParams",
    "Pose",
    "Similarity",
    "backproject",
    "build_nn_field",
    "chain_edges",
    "control_points_from_params",
    "direction_from_angles",
    "evaluate_bezier",
    "extract_edges",
    "nn_lookup",
    "pose_retract",
    "project",
    "sample_segment",
    "sim3_align",
    "__version__",
]
