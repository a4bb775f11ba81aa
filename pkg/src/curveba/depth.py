"""Semi-dense depth recovery for edge pixels via 1D epipolar search.

For each edge pixel the search samples the epipolar segment in a reference
frame over a depth interval, scores 1D intensity patches, short-lists the
best local minima, disambiguates them with a 5x5 patch, refines the winner
to sub-pixel by a parabola fit, and converts back to principal-axis depth.
Recovered depths along a chain are then cleaned with a windowed median.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .frame import CameraFrame
from .imgio import bilinear_sample

_PATCH_1D = np.arange(-2.0, 3.0)  # 5 samples at unit spacing
_PATCH_2D = np.stack(
    np.meshgrid(np.arange(-2.0, 3.0), np.arange(-2.0, 3.0)), axis=-1
).reshape(-1, 2)


@dataclass
class DepthHypothesis:
    pixel: np.ndarray
    depth: float
    ref_frame: int
    score: float


def epipolar_direction(p, target: CameraFrame, ref: CameraFrame) -> np.ndarray | None:
    """Unit direction of the epipolar line at pixel p in the target image.

    Computed from the homogeneous epipole (image of the reference camera
    center), which stays well-defined when the epipole is at infinity.
    Returns None for degenerate geometry (zero baseline or p at the epipole).
    """
    c_ref = target.pose.world_to_cam(ref.pose.center())
    e_h = target.intrinsics.k_matrix() @ c_ref
    d = np.array([e_h[0] - p[0] * e_h[2], e_h[1] - p[1] * e_h[2]])
    n = np.linalg.norm(d)
    if n < 1e-9:
        return None
    return d / n


def select_reference(
    target: CameraFrame, candidates, p, cfg: PipelineConfig | None = None
) -> int | None:
    """Pick the best stereo reference for pixel p, or None.

    Candidates are scored by baseline length (gated to the configured range)
    times |cos| of the angle between the epipolar direction at p and the
    image gradient at p; the best score must clear a floor.
    """
    cfg = cfg or PipelineConfig()
    x, y = int(np.rint(p[0])), int(np.rint(p[1]))
    h, w = target.gray.shape
    if not (0 <= x < w and 0 <= y < h):
        return None
    g = target.edges.grad_dir[y, x]
    if np.linalg.norm(g) < 0.5:  # not an edge pixel
        return None
    best_id = None
    best_score = cfg.ref_score_floor
    for cand in candidates:
        baseline = float(np.linalg.norm(cand.pose.center() - target.pose.center()))
        if not cfg.baseline_min <= baseline <= cfg.baseline_max:
            continue
        epi = epipolar_direction(p, target, cand)
        if epi is None:
            continue
        score = baseline * abs(float(epi @ g))
        if score > best_score:
            best_score = score
            best_id = cand.frame_id
    return best_id


def _invert_depths(q: np.ndarray, ka: np.ndarray, kb: np.ndarray) -> np.ndarray:
    """Invert the projective map d -> pixel for points q on the epipolar line.

    Uses whichever pixel coordinate is better conditioned per point; points
    where both denominators vanish come back NaN.
    """
    den_x = q[:, 0] * ka[2] - ka[0]
    den_y = q[:, 1] * ka[2] - ka[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        dx = (kb[0] - q[:, 0] * kb[2]) / den_x
        dy = (kb[1] - q[:, 1] * kb[2]) / den_y
    out = np.where(np.abs(den_x) >= np.abs(den_y), dx, dy)
    out[np.maximum(np.abs(den_x), np.abs(den_y)) < 1e-15] = np.nan
    return out


def _clip_segment_to_rect(p0, p1, w, h, margin):
    """Liang-Barsky clip of the segment p0->p1 to the image rect; (a0, a1) or None."""
    d = p1 - p0
    a0, a1 = 0.0, 1.0
    for coord, lo, hi in ((0, margin, w - 1 - margin), (1, margin, h - 1 - margin)):
        dv = d[coord]
        pv = p0[coord]
        if abs(dv) < 1e-12:
            if pv < lo or pv > hi:
                return None
            continue
        t0 = (lo - pv) / dv
        t1 = (hi - pv) / dv
        if t0 > t1:
            t0, t1 = t1, t0
        a0 = max(a0, t0)
        a1 = min(a1, t1)
        if a0 > a1:
            return None
    return a0, a1


def epipolar_depth(
    target: CameraFrame,
    ref: CameraFrame,
    p,
    depth_range: tuple[float, float] | None = None,
    cfg: PipelineConfig | None = None,
) -> DepthHypothesis | None:
    """Recover the depth of edge pixel p in ``target`` by searching in ``ref``."""
    cfg = cfg or PipelineConfig()
    if depth_range is None:
        depth_range = (cfg.depth_min, cfg.depth_max)
    d_lo, d_hi = depth_range
    p = np.asarray(p, dtype=float)
    intr_t, intr_r = target.intrinsics, ref.intrinsics

    # Ref-camera coordinates of p's ray point at depth d are d*a_vec + b_vec.
    ray = np.array([(p[0] - intr_t.cx) / intr_t.fx, (p[1] - intr_t.cy) / intr_t.fy, 1.0])
    a_vec = ref.pose.r_w.T @ (target.pose.r_w @ ray)
    b_vec = ref.pose.r_w.T @ (target.pose.t_w - ref.pose.t_w)
    k_r = intr_r.k_matrix()
    ka = k_r @ a_vec
    kb = k_r @ b_vec

    # Restrict the depth interval to points in front of the reference camera.
    eps = 1e-9
    if abs(a_vec[2]) < 1e-15:
        if b_vec[2] <= 0:
            return None
    else:
        d_cross = -b_vec[2] / a_vec[2]
        if a_vec[2] > 0:
            d_lo = max(d_lo, d_cross + eps)
        else:
            d_hi = min(d_hi, d_cross - eps)
    if d_lo >= d_hi:
        return None

    def to_px(d):
        v = ka * d + kb
        return v[:2] / v[2]

    u0 = to_px(d_lo)
    u1 = to_px(d_hi)
    h, w = ref.gray.shape
    span = _clip_segment_to_rect(u0, u1, w, h, margin=3.0)
    if span is None:
        return None
    a0, a1 = span
    seg = u1 - u0
    length = float(np.linalg.norm(seg)) * (a1 - a0)
    if length < 1e-6:
        return None
    n_samples = int(np.clip(np.ceil(length) + 1, 5, 500))
    alphas = np.linspace(a0, a1, n_samples)
    q = u0[None, :] + alphas[:, None] * seg[None, :]
    depths = _invert_depths(q, ka, kb)
    feasible = np.isfinite(depths) & (depths > 0)

    dir_t = epipolar_direction(p, target, ref)
    if dir_t is None:
        return None

    # Patch correspondence: a target offset o maps, for candidate depth d, to
    # proj(G (p+o)_h d + kb) with G = K_ref R_ref^T R_t K_t^{-1}. Sampling the
    # reference through this map at each candidate handles the epipolar
    # stretch and the in-plane rotation between the views exactly for a
    # locally fronto-parallel surface.
    g_mat = k_r @ (ref.pose.r_w.T @ target.pose.r_w) @ np.linalg.inv(intr_t.k_matrix())

    def mapped(offsets, d):
        pts = np.atleast_2d(p + offsets) if offsets.ndim == 1 else p[None, :] + offsets
        ph = np.column_stack([pts, np.ones(pts.shape[0])])
        v = (ph @ g_mat.T) * np.asarray(d).reshape(-1, 1, 1) + kb
        return v[..., :2] / v[..., 2:]

    tgt_pts = p[None, :] + _PATCH_1D[:, None] * dir_t[None, :]
    tgt_vals = bilinear_sample(target.gray, tgt_pts[:, 0], tgt_pts[:, 1])
    if np.any(np.isnan(tgt_vals)):
        return None

    ref_pts = mapped(_PATCH_1D[:, None] * dir_t[None, :], depths)  # (M, 5, 2)
    ref_vals = bilinear_sample(ref.gray, ref_pts[..., 0], ref_pts[..., 1])
    score_1d = ((ref_vals - tgt_vals[None, :]) ** 2).sum(axis=1)
    score_1d = np.where(np.isnan(score_1d) | ~feasible, np.inf, score_1d)

    interior = np.arange(1, n_samples - 1)
    is_min = (score_1d[interior] < score_1d[interior - 1]) & (
        score_1d[interior] < score_1d[interior + 1]
    )
    minima = interior[is_min & np.isfinite(score_1d[interior])]
    if minima.size == 0:
        return None
    minima = minima[np.argsort(score_1d[minima], kind="stable")][:3]

    # 2D disambiguation with a 5x5 patch through the same local map
    tgt2 = bilinear_sample(target.gray, p[0] + _PATCH_2D[:, 0], p[1] + _PATCH_2D[:, 1])
    if np.any(np.isnan(tgt2)):
        return None
    scores_2d = []
    for k in minima:
        pts2 = mapped(_PATCH_2D, depths[k])[0]
        ref2 = bilinear_sample(ref.gray, pts2[:, 0], pts2[:, 1])
        s = float(((ref2 - tgt2) ** 2).sum()) if not np.any(np.isnan(ref2)) else np.inf
        scores_2d.append(s)
    scores_2d = np.array(scores_2d)
    order = np.argsort(scores_2d, kind="stable")
    best = scores_2d[order[0]]
    if not np.isfinite(best) or best > cfg.patch_reject:
        return None
    if order.size >= 2:
        second = scores_2d[order[1]]
        if second <= 0.0 or best / second > cfg.ambiguity_ratio:
            return None
    k_best = int(minima[order[0]])

    # Sub-pixel refinement: parabola over the 1D score at the winner
    s_m, s_0, s_p = score_1d[k_best - 1], score_1d[k_best], score_1d[k_best + 1]
    denom = s_m - 2.0 * s_0 + s_p
    delta = 0.0
    if np.isfinite(denom) and denom > 1e-12:
        delta = float(np.clip(0.5 * (s_m - s_p) / denom, -0.5, 0.5))
    alpha_star = alphas[k_best] + delta * (alphas[1] - alphas[0] if n_samples > 1 else 0.0)
    u_star = u0 + alpha_star * seg
    d_star = float(_invert_depths(u_star[None, :], ka, kb)[0])
    if not np.isfinite(d_star) or d_star <= 0.0:
        return None
    if not (0.9 * depth_range[0] <= d_star <= 1.1 * depth_range[1]):
        return None
    return DepthHypothesis(pixel=p, depth=float(d_star), ref_frame=ref.frame_id, score=best)


def robust_window_average(depths: np.ndarray, window: int = 5) -> np.ndarray:
    """Windowed median cleanup of per-pixel depths along a chain.

    Each valid pixel's depth becomes the median of the valid depths in its
    centered window; pixels deviating from that median by more than 20% are
    invalidated (NaN). Pixels with no depth stay invalid.
    """
    depths = np.asarray(depths, dtype=float)
    half = window // 2
    m = depths.shape[0]
    out = np.full(m, np.nan)
    for i in range(m):
        if not np.isfinite(depths[i]):
            continue
        win = depths[max(0, i - half) : i + half + 1]
        med = float(np.median(win[np.isfinite(win)]))
        if abs(depths[i] - med) > 0.2 * med:
            continue
        out[i] = med
    return out


def chain_depths(
    target: CameraFrame, candidates, chain_pixels: np.ndarray, cfg: PipelineConfig | None = None
) -> np.ndarray:
    """Depths (NaN where unrecovered) for an ordered chain of edge pixels.

    Uses the frame's external depth map when present, otherwise the epipolar
    search against per-pixel selected references; both paths end with the
    robust windowed average.
    """
    cfg = cfg or PipelineConfig()
    m = chain_pixels.shape[0]
    raw = np.full(m, np.nan)
    if target.depth_map is not None:
        xs = chain_pixels[:, 0].astype(int)
        ys = chain_pixels[:, 1].astype(int)
        raw = np.asarray(target.depth_map, dtype=float)[ys, xs]
        raw = np.where(raw > 0, raw, np.nan)
    else:
        by_id = {c.frame_id: c for c in candidates}
        for i in range(m):
            p = chain_pixels[i].astype(float)
            ref_id = select_reference(target, candidates, p, cfg)
            if ref_id is None:
                continue
            hyp = epipolar_depth(target, by_id[ref_id], p, (cfg.depth_min, cfg.depth_max), cfg)
            if hyp is not None:
                raw[i] = hyp.depth
    return robust_window_average(raw, window=cfg.depth_window)
