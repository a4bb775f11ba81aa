"""Initialization of smooth polybeziers from pixel chains with depths.

Valid chain pixels are backprojected to world points, split into near-equal
runs, fit segment-by-segment with a linear least-squares solve over the
Bernstein design matrix, and finally linked into a C1 polybezier.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .camera import backproject
from .config import PipelineConfig
from .curves import (
    BezierSegment,
    HANDLE_FLOOR,
    PolybezierCurve,
    PolybezierParams,
    bernstein_weights,
    chord_lengths,
)
from .edges import PixelChain
from .frame import CameraFrame
from .rotations import rotation_aligning_z
from scipy import ndimage


@lru_cache(maxsize=256)
def _design_matrix(m: int) -> np.ndarray:
    """Bernstein design matrix for m uniform parameters t_k = k/(m-1)."""
    return bernstein_weights(np.linspace(0.0, 1.0, m))


def fit_segment(points: np.ndarray) -> BezierSegment:
    """Least-squares cubic fit assuming uniform curve parameters.

    Points sampled exactly from a cubic at uniform t are recovered exactly;
    m == 4 interpolates.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError("points must be (m, 3)")
    m = points.shape[0]
    if m < 4:
        raise ValueError("need at least 4 points to fit a cubic segment")
    if np.ptp(points, axis=0).max() < 1e-15:
        raise ValueError("degenerate fit: all points identical")
    ctrl, *_ = np.linalg.lstsq(_design_matrix(m), points, rcond=None)
    return BezierSegment(*ctrl)


def split_chain(points: np.ndarray, target_len: int) -> list[np.ndarray]:
    """Split into ceil(m/target_len) runs of near-equal length.

    Adjacent runs share their boundary point; run lengths differ by at most
    one.
    """
    if target_len < 4:
        raise ValueError("target_len must be >= 4")
    points = np.asarray(points)
    m = points.shape[0]
    n_runs = max(1, int(np.ceil(m / target_len)))
    bounds = np.rint(np.linspace(0, m - 1, n_runs + 1)).astype(int)
    return [points[bounds[j] : bounds[j + 1] + 1] for j in range(n_runs)]


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 1e-15 else v


def link_segments(fitted: list[BezierSegment]) -> PolybezierParams:
    """Link independently fitted segments into shared-latent parameters.

    Link points come from the segment endpoints (the first control point of
    each segment replaced by the last of the previous); an interior link
    direction is the normalized average of the adjacent unit tangents;
    handle lengths keep each segment's own tangent magnitudes. Pre-rotations
    are set so a zero angle pair reproduces the link direction.
    """
    if not fitted:
        raise ValueError("no segments to link")
    n = len(fitted)
    q = np.empty((n + 1, 3))
    q[0] = fitted[0].p0
    for i, seg in enumerate(fitted):
        q[i + 1] = seg.p3

    def out_tangent(seg):  # tangent direction at the segment start
        t = _unit(seg.p1 - seg.p0)
        return t if np.linalg.norm(t) > 0 else _unit(seg.p3 - seg.p0)

    def in_tangent(seg):  # tangent direction at the segment end
        t = _unit(seg.p3 - seg.p2)
        return t if np.linalg.norm(t) > 0 else _unit(seg.p3 - seg.p0)

    dirs = np.empty((n + 1, 3))
    dirs[0] = out_tangent(fitted[0])
    dirs[n] = in_tangent(fitted[-1])
    for i in range(1, n):
        dirs[i] = _unit(0.5 * in_tangent(fitted[i - 1]) + 0.5 * out_tangent(fitted[i]))

    handles = np.empty((n, 2))
    for i, seg in enumerate(fitted):
        handles[i, 0] = np.linalg.norm(seg.p1 - seg.p0)
        handles[i, 1] = np.linalg.norm(seg.p3 - seg.p2)
    handles = np.maximum(handles, HANDLE_FLOOR)

    r0 = np.stack([rotation_aligning_z(d) for d in dirs])
    return PolybezierParams(q, np.zeros((n + 1, 2)), r0, handles)


def mean_hsv_over_mask(hsv: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean HSV over a pixel mask; hue is averaged circularly (degrees)."""
    region = hsv[mask]
    if region.shape[0] == 0:
        return np.zeros(3)
    ang = np.deg2rad(region[:, 0])
    h = np.rad2deg(np.arctan2(np.sin(ang).mean(), np.cos(ang).mean())) % 360.0
    return np.array([h, region[:, 1].mean(), region[:, 2].mean()])


def chain_mean_hsv(frame: CameraFrame, pixels: np.ndarray, dilate: int = 2) -> np.ndarray:
    """Mean HSV over the chain dilated by ``dilate`` pixels."""
    h, w = frame.gray.shape
    mask = np.zeros((h, w), dtype=bool)
    mask[pixels[:, 1], pixels[:, 0]] = True
    if dilate > 0:
        yy, xx = np.mgrid[-dilate : dilate + 1, -dilate : dilate + 1]
        mask = ndimage.binary_dilation(mask, structure=(yy**2 + xx**2) <= dilate**2)
    return mean_hsv_over_mask(frame.edges.hsv, mask)


def init_curve_from_chain(
    chain: PixelChain,
    depths: np.ndarray,
    frame: CameraFrame,
    cfg: PipelineConfig | None = None,
    curve_id: int = 0,
) -> PolybezierCurve | None:
    """Build a polybezier from a chain and per-pixel depths; None if too sparse."""
    cfg = cfg or PipelineConfig()
    depths = np.asarray(depths, dtype=float)
    valid = np.isfinite(depths) & (depths > 0)
    if valid.sum() < 4:
        return None
    pixels = chain.pixels[valid].astype(float)
    world = backproject(pixels, depths[valid], frame.intrinsics, frame.pose)
    runs = split_chain(world, cfg.target_len)
    fitted = []
    for run in runs:
        if run.shape[0] < 4 or np.ptp(run, axis=0).max() < 1e-15:
            continue
        fitted.append(fit_segment(run))
    if not fitted:
        return None
    params = link_segments(fitted)
    centroid = world.mean(axis=0)
    view = _unit(centroid - frame.pose.center())
    return PolybezierCurve(
        curve_id=curve_id,
        params=params,
        init_lengths=chord_lengths(params),
        origin_frame=frame.frame_id,
        mean_hsv=chain_mean_hsv(frame, chain.pixels, cfg.hsv_dilate),
        view_dir=view,
    )
