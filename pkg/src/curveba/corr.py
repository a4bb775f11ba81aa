"""Segment-keyframe correspondence management.

Curves live in a temporary map until their segments are observed in enough
keyframes, then move to the global map used by bundle adjustment. Each
candidate (segment, frame) pair is verified with four criteria in a fixed
order — spatial registration error, HSV appearance error, viewing-direction
cone, positive depth — and the first failure is reported. Curves whose
segments mostly disappear from recent keyframes are disabled until a fresh
accepted observation reactivates them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ba import SegmentProjection, project_segment
from .camera import backproject, project
from .config import PipelineConfig
from .curves import (
    PolybezierCurve,
    PolybezierParams,
    chord_lengths,
    control_points_from_params,
    evaluate_bezier,
)
from .edges import PixelChain
from .frame import CameraFrame
from .spline_fit import (
    chain_mean_hsv,
    fit_segment,
    init_curve_from_chain,
    link_segments,
    split_chain,
)

TEMPORARY = "temporary"
GLOBAL = "global"
DISABLED = "disabled"


def appearance_error(hsv_a, hsv_b, lam: float = 1.0) -> float:
    """HSV appearance distance between two (H, S, L) mean triples.

    The hue term uses the circular difference normalized by 180 degrees and
    is scaled by the average saturation (hue is unobservable at zero
    saturation); the lightness term is an absolute difference.
    """
    h1, s1, l1 = (float(v) for v in hsv_a)
    h2, s2, l2 = (float(v) for v in hsv_b)
    dh = abs(h1 - h2) % 360.0
    dh = min(dh, 360.0 - dh) / 180.0
    return lam * 0.5 * (s1 + s2) * dh + abs(l1 - l2)


@dataclass
class CurveRecord:
    """Lifecycle state of one curve in the correspondence graph."""

    curve: PolybezierCurve
    status: str = TEMPORARY
    obs: list = field(default_factory=list)  # per segment: sorted list of frame ids
    miss_count: np.ndarray | None = None
    view_sum: np.ndarray | None = None
    view_obs: int = 0

    def __post_init__(self):
        n = self.curve.segment_count
        if not self.obs:
            self.obs = [[] for _ in range(n)]
        if self.miss_count is None:
            self.miss_count = np.zeros(n, dtype=int)
        if self.view_sum is None:
            self.view_sum = self.curve.view_dir.copy()
            self.view_obs = 1

    @property
    def mean_view_dir(self) -> np.ndarray:
        n = np.linalg.norm(self.view_sum)
        return self.view_sum / n if n > 1e-12 else self.curve.view_dir


class CorrespondenceGraph:
    """Which segments are observed in which keyframes, plus curve lifecycle."""

    def __init__(self):
        self.records: dict[int, CurveRecord] = {}
        self.keyframes: list[int] = []
        self._next_id = 0

    def add_keyframe(self, frame_id: int) -> None:
        if frame_id in self.keyframes:
            raise ValueError(f"keyframe {frame_id} already registered")
        self.keyframes.append(frame_id)

    def add_curve(self, curve: PolybezierCurve, status: str = TEMPORARY) -> int:
        cid = self._next_id
        self._next_id += 1
        curve.curve_id = cid
        rec = CurveRecord(curve=curve, status=status)
        if curve.origin_frame >= 0:
            for sid in range(curve.segment_count):
                rec.obs[sid].append(curve.origin_frame)
        self.records[cid] = rec
        return cid

    def record_observation(self, cid: int, sid: int, fid: int, view_dir=None) -> None:
        rec = self.records[cid]
        if fid not in rec.obs[sid]:
            rec.obs[sid].append(fid)
            rec.obs[sid].sort()
        if view_dir is not None:
            rec.view_sum = rec.view_sum + np.asarray(view_dir, dtype=float)
            rec.view_obs += 1
        if rec.status == DISABLED:
            rec.status = GLOBAL  # reactivated by a fresh accepted observation

    def note_miss(self, cid: int, sid: int) -> None:
        self.records[cid].miss_count[sid] += 1

    def iter_segment_observations(self, cid: int):
        rec = self.records[cid]
        for sid, frames in enumerate(rec.obs):
            for fid in frames:
                yield sid, fid

    def segment_obs_count(self, cid: int, sid: int) -> int:
        return len(self.records[cid].obs[sid])

    def active_curve_ids(self) -> list[int]:
        return sorted(cid for cid, r in self.records.items() if r.status == GLOBAL)

    def curves_by_status(self, *statuses) -> list[int]:
        return sorted(cid for cid, r in self.records.items() if r.status in statuses)

    def segments_observed_in(self, fid: int, status: str = GLOBAL) -> int:
        count = 0
        for rec in self.records.values():
            if rec.status != status:
                continue
            count += sum(1 for frames in rec.obs if fid in frames)
        return count

    def dump(self, path) -> None:
        lines = []
        for cid in sorted(self.records):
            rec = self.records[cid]
            lines.append(f"status {cid} {rec.status}")
            for sid, frames in enumerate(rec.obs):
                for fid in frames:
                    lines.append(f"obs {cid} {sid} {fid}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))


def segment_view_dir(curve: PolybezierCurve, seg_idx: int, frame: CameraFrame) -> np.ndarray:
    """Unit vector from the camera center to the segment midpoint (world)."""
    mid = evaluate_bezier(control_points_from_params(curve.params, seg_idx), 0.5)
    v = mid - frame.pose.center()
    return v / np.linalg.norm(v)


def verify_correspondence(
    record: CurveRecord, seg_idx: int, frame: CameraFrame, cfg: PipelineConfig | None = None
) -> tuple[bool, str, SegmentProjection]:
    """Check the four acceptance criteria for (segment, frame).

    Returns (accepted, reason, projection); ``reason`` names the first failed
    criterion ("spatial", "appearance", "viewing", "depth") or is "ok". The
    caller records the observation and claims on acceptance.
    """
    cfg = cfg or PipelineConfig()
    proj = project_segment(record.curve.params, seg_idx, frame, cfg)

    front = proj.depths > 0
    if front.any():
        penal = np.where(proj.valid[front], np.abs(proj.residuals[front]), cfg.nn_radius)
        if float(penal.mean()) >= cfg.spatial_thresh:
            return False, "spatial", proj

        if proj.valid.any():
            pix = proj.matched[proj.valid].astype(int)
            obs_hsv = chain_mean_hsv(frame, pix, cfg.hsv_dilate)
            err = appearance_error(record.curve.mean_hsv, obs_hsv, cfg.appearance_lambda)
            if err >= cfg.appearance_thresh:
                return False, "appearance", proj

    view = segment_view_dir(record.curve, seg_idx, frame)
    cos_lim = np.cos(np.deg2rad(cfg.viewing_angle_max_deg))
    if float(view @ record.mean_view_dir) < cos_lim - 1e-12:
        return False, "viewing", proj

    if not front.all():
        return False, "depth", proj
    return True, "ok", proj


def update_visibility(graph: CorrespondenceGraph, cfg: PipelineConfig | None = None) -> list[int]:
    """Disable global curves mostly unobserved in the last three keyframes.

    A curve is disabled when strictly more than half of its segments have no
    observation across the three most recent keyframes; exactly half stays
    active. Returns the newly disabled curve ids.
    """
    if len(graph.keyframes) < 3:
        return []
    recent = set(graph.keyframes[-3:])
    disabled = []
    for cid in graph.curves_by_status(GLOBAL):
        rec = graph.records[cid]
        unseen = sum(1 for frames in rec.obs if not recent.intersection(frames))
        if unseen * 2 > len(rec.obs):
            rec.status = DISABLED
            disabled.append(cid)
    return disabled


def promote_segments(
    graph: CorrespondenceGraph, min_obs: int = 3, fast_track: bool = False
) -> list[int]:
    """Move temporary curves with enough observations to the global map.

    A curve is promoted when every segment has at least ``min_obs`` keyframe
    observations; with ``fast_track`` (tracking starvation) all temporary
    curves are promoted immediately.
    """
    promoted = []
    for cid in graph.curves_by_status(TEMPORARY):
        rec = graph.records[cid]
        if fast_track or all(len(frames) >= min_obs for frames in rec.obs):
            rec.status = GLOBAL
            promoted.append(cid)
    return promoted


# ---------------------------------------------------------------------------
# Spawning new curves / extending existing ones
# ---------------------------------------------------------------------------


def _unclaimed_runs(pixels: np.ndarray, claimed: np.ndarray, min_len: int):
    free = ~claimed[pixels[:, 1], pixels[:, 0]]
    runs = []
    start = None
    for i, f in enumerate(free):
        if f and start is None:
            start = i
        elif not f and start is not None:
            if i - start >= min_len:
                runs.append(pixels[start:i])
            start = None
    if start is not None and len(free) - start >= min_len:
        runs.append(pixels[start:])
    return runs


def _curve_end_in_image(record: CurveRecord, frame: CameraFrame, tail: bool):
    """(pixel, unit image tangent pointing outward) of a curve end, or None."""
    params = record.curve.params
    n = params.segment_count
    seg = control_points_from_params(params, n - 1 if tail else 0)
    t0, t1 = (1.0, 0.9) if tail else (0.0, 0.1)
    p_end, z_end = project(evaluate_bezier(seg, t0), frame.intrinsics, frame.pose)
    p_in, z_in = project(evaluate_bezier(seg, t1), frame.intrinsics, frame.pose)
    if z_end <= 0 or z_in <= 0:
        return None
    d = p_end - p_in
    nrm = np.linalg.norm(d)
    if nrm < 1e-9:
        return None
    return p_end, d / nrm


def _run_matches_end(run: np.ndarray, end_px, end_dir, cfg: PipelineConfig):
    """If a run's head or tail continues the given curve end, return the run
    ordered so that it extends outward from the curve; else None."""
    lookahead = min(5, run.shape[0] - 1)
    for pix, into, flipped in (
        (run[0], run[lookahead] - run[0], False),
        (run[-1], run[-lookahead - 1] - run[-1], True),
    ):
        if np.linalg.norm(pix.astype(float) - end_px) > cfg.extend_endpoint_px:
            continue
        v = into.astype(float)
        nrm = np.linalg.norm(v)
        if nrm < 1e-9:
            continue
        cosang = float((v / nrm) @ end_dir)
        if cosang >= np.cos(np.deg2rad(cfg.extend_tangent_deg)):
            return run[::-1] if flipped else run
    return None


def _extend_record(record: CurveRecord, fitted, at_tail: bool, frame_id: int) -> None:
    """Splice newly fitted segments onto a record at its head or tail."""
    params = record.curve.params
    new = link_segments(fitted)
    k = new.segment_count
    if at_tail:
        q = np.vstack([params.link_points, new.link_points[1:]])
        th = np.vstack([params.link_angles, new.link_angles[1:]])
        r0 = np.concatenate([params.pre_rotations, new.pre_rotations[1:]])
        d = np.vstack([params.handle_lengths, new.handle_lengths])
        record.obs.extend([[frame_id] for _ in range(k)])
        record.miss_count = np.concatenate([record.miss_count, np.zeros(k, dtype=int)])
    else:
        q = np.vstack([new.link_points[:-1], params.link_points])
        th = np.vstack([new.link_angles[:-1], params.link_angles])
        r0 = np.concatenate([new.pre_rotations[:-1], params.pre_rotations])
        d = np.vstack([new.handle_lengths, params.handle_lengths])
        record.obs = [[frame_id] for _ in range(k)] + record.obs
        record.miss_count = np.concatenate([np.zeros(k, dtype=int), record.miss_count])
    record.curve.params = PolybezierParams(q, th, r0, d)
    record.curve.init_lengths = chord_lengths(record.curve.params)


def spawn_segments(
    frame: CameraFrame,
    chains,
    graph: CorrespondenceGraph,
    claimed: np.ndarray,
    depth_provider,
    cfg: PipelineConfig | None = None,
) -> list[int]:
    """Create curves from unclaimed chain runs with successful depth.

    ``depth_provider(pixels)`` returns per-pixel depths (NaN where
    unrecovered). A run smoothly continuing the image projection of a curve
    observed in this frame is appended to that curve; otherwise a new
    temporary curve is created (direct-to-global insertion is the fast-track
    flag of promote_segments). Returns the ids of affected curves.
    """
    cfg = cfg or PipelineConfig()
    visible = [
        cid
        for cid in graph.curves_by_status(GLOBAL, TEMPORARY)
        if any(frame.frame_id in frames for frames in graph.records[cid].obs)
    ]
    affected = []
    for chain in chains:
        for run in _unclaimed_runs(chain.pixels, claimed, cfg.min_chain_len):
            depths = depth_provider(run)
            extended = False
            for cid in visible:
                rec = graph.records[cid]
                for tail in (True, False):
                    end = _curve_end_in_image(rec, frame, tail)
                    if end is None:
                        continue
                    ordered = _run_matches_end(run, end[0], end[1], cfg)
                    if ordered is None:
                        continue
                    oriented_depths = depths if ordered is run else depths[::-1]
                    fitted = _fit_runs(ordered, oriented_depths, frame, cfg)
                    if not fitted:
                        continue
                    _extend_record(rec, fitted, tail, frame.frame_id)
                    affected.append(cid)
                    extended = True
                    break
                if extended:
                    break
            if extended:
                continue
            curve = init_curve_from_chain(PixelChain(run, -1), depths, frame, cfg)
            if curve is None:
                continue
            cid = graph.add_curve(curve, status=TEMPORARY)
            affected.append(cid)
    return affected


def _fit_runs(pixels: np.ndarray, depths: np.ndarray, frame: CameraFrame, cfg: PipelineConfig):
    """Backproject valid pixels and fit bezier segments per near-equal run."""
    valid = np.isfinite(depths) & (depths > 0)
    if valid.sum() < 4:
        return []
    world = backproject(pixels[valid].astype(float), depths[valid], frame.intrinsics, frame.pose)
    fitted = []
    for run in split_chain(world, cfg.target_len):
        if run.shape[0] >= 4 and np.ptp(run, axis=0).max() > 1e-15:
            fitted.append(fit_segment(run))
    return fitted
