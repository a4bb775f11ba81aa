"""Per-keyframe bundle of image data and derived lookup structures."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics, Pose
from .config import PipelineConfig
from .edges import EdgeImage, NNField, PixelChain, build_nn_field, chain_edges, extract_edges
from .imgio import to_gray


@dataclass
class CameraFrame:
    """Immutable image data for one keyframe; the pose is updated by BA."""

    frame_id: int
    intrinsics: Intrinsics
    pose: Pose
    gray: np.ndarray  # float64 luma
    edges: EdgeImage
    nn: NNField
    chains: list[PixelChain] = field(default_factory=list)
    depth_map: np.ndarray | None = None  # optional external depth seed


def make_frame(
    frame_id: int,
    image: np.ndarray,
    intr: Intrinsics,
    pose: Pose,
    cfg: PipelineConfig | None = None,
    depth_map: np.ndarray | None = None,
) -> CameraFrame:
    cfg = cfg or PipelineConfig()
    edges = extract_edges(image, cfg.canny_low, cfg.canny_high, sigma=cfg.canny_sigma)
    chains = chain_edges(edges, cfg.curvature_thresh, cfg.min_chain_len)
    nn = build_nn_field(edges, radius=cfg.nn_radius)
    return CameraFrame(
        frame_id=frame_id,
        intrinsics=intr,
        pose=pose,
        gray=to_gray(image),
        edges=edges,
        nn=nn,
        chains=chains,
        depth_map=depth_map,
    )
