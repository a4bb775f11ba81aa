"""Curve-based bundle adjustment over camera poses and polybezier latents.

The objective is a robustified geometric registration cost plus two
regularizers:

  cost = sum huber(r_geo) + lambda1 * sum r_len^2 + lambda2 * sum r_ang^2

A geometric residual is the signed distance between a reprojected curve
sample and its nearest edge pixel, projected onto that pixel's gradient
direction, so motion tangential to an edge is free ("sliding"). One residual
is emitted per (segment, visible frame, sample k = 0..s). Length residuals
anchor each segment's chord to its value at initialization; angle residuals
penalize link directions deviating from the chord.

The solver is Levenberg-Marquardt over damped normal equations with
analytic Jacobians. Nearest-neighbour matches are treated as locally
constant ("frozen") during linearization; step acceptance always re-evaluates
the true cost with fresh lookups. Pose blocks are 6-vector local increments
(rotation exp-map left-composed on the camera-to-world rotation, additive
world translation) re-centered after every accepted step, so Jacobians are
always taken at a zero increment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .camera import Pose, pose_retract
from .config import PipelineConfig
from .curves import (
    PolybezierParams,
    bernstein_weights,
    direction_from_angles,
    direction_jacobian,
)
from .frame import CameraFrame

_DENSE_SOLVE_LIMIT = 400


def huber(r: float, delta: float) -> float:
    """Huber cost: r^2/2 inside delta, linear growth outside."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    a = abs(r)
    if a <= delta:
        return 0.5 * r * r
    return delta * (a - 0.5 * delta)


def huber_vec(r: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(r)
    return np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


def huber_weight(r: np.ndarray, delta: float) -> np.ndarray:
    """IRLS weight mu'(r)/r for the Huber cost."""
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def length_residual(q_i, q_ip1, l0: float) -> float:
    """Chord length minus its initialization value (squared by the solver)."""
    return float(np.linalg.norm(np.asarray(q_i) - np.asarray(q_ip1)) - l0)


def angle_residual(q_i, q_ip1, theta_i, theta_ip1, r0_i, r0_ip1) -> tuple[float, float]:
    """Angles between the chord and the two link directions, each in [0, pi]."""
    c = np.asarray(q_ip1, dtype=float) - np.asarray(q_i, dtype=float)
    n = np.linalg.norm(c)
    if n < 1e-12:
        raise ValueError("coincident endpoints: chord undefined")
    c = c / n
    out = []
    for r0, th in ((r0_i, theta_i), (r0_ip1, theta_ip1)):
        v = direction_from_angles(r0, th)
        out.append(float(np.arccos(np.clip(c @ v, -1.0, 1.0))))
    return out[0], out[1]


@dataclass
class SegmentProjection:
    """Per-sample diagnostics of one segment reprojected into one frame."""

    pixels: np.ndarray  # (s+1, 2) projected pixel positions
    depths: np.ndarray  # (s+1,) camera-frame depths
    residuals: np.ndarray  # (s+1,) signed gradient-projected residuals (NaN if no match)
    matched: np.ndarray  # (s+1, 2) matched edge pixels, -1 where none
    valid: np.ndarray  # (s+1,) bool: positive depth and successful lookup


def geo_residual(seg_params: PolybezierParams, seg_idx: int, pose_params: Pose, frame: CameraFrame, t_k: float, cfg: PipelineConfig | None = None) -> float | None:
    """Single-sample geometric residual, or None when the sample is dropped."""
    cfg = cfg or PipelineConfig()
    proj = project_segment(seg_params, seg_idx, frame, cfg, pose=pose_params, t_values=np.array([t_k]))
    if not proj.valid[0]:
        return None
    return float(proj.residuals[0])


def project_segment(
    params: PolybezierParams,
    seg_idx: int,
    frame: CameraFrame,
    cfg: PipelineConfig | None = None,
    pose: Pose | None = None,
    t_values: np.ndarray | None = None,
) -> SegmentProjection:
    """Project s+1 samples of a segment into a frame and match edge pixels."""
    cfg = cfg or PipelineConfig()
    pose = pose or frame.pose
    if t_values is None:
        s = cfg.samples_per_segment
        t_values = np.arange(s + 1) / s
    b = bernstein_weights(t_values)
    q0 = params.link_points[seg_idx]
    q1 = params.link_points[seg_idx + 1]
    v0 = params.link_direction(seg_idx)
    v1 = params.link_direction(seg_idx + 1)
    d1, d2 = params.handle_lengths[seg_idx]
    ctrl = np.stack([q0, q0 + d1 * v0, q1 - d2 * v1, q1])
    world = b @ ctrl

    intr = frame.intrinsics
    x_c = (world - pose.t_w) @ pose.r_w
    z = x_c[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.stack(
            [intr.fx * x_c[:, 0] / z + intr.cx, intr.fy * x_c[:, 1] / z + intr.cy], axis=1
        )

    n = t_values.shape[0]
    residuals = np.full(n, np.nan)
    matched = np.full((n, 2), -1.0)
    valid = np.zeros(n, dtype=bool)

    front = z > 0
    if front.any():
        xi = np.full(n, -1, dtype=int)
        yi = np.full(n, -1, dtype=int)
        xi[front] = np.rint(px[front, 0]).astype(int)
        yi[front] = np.rint(px[front, 1]).astype(int)
        h, w = frame.nn.shape
        inb = front & (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        if inb.any():
            ex = frame.nn.nearest_x[yi[inb], xi[inb]]
            ey = frame.nn.nearest_y[yi[inb], xi[inb]]
            hit = ex >= 0
            idx = np.nonzero(inb)[0][hit]
            ex, ey = ex[hit], ey[hit]
            g = frame.edges.grad_dir[ey, ex]
            diff = px[idx] - frame.edges.subpix[ey, ex]
            residuals[idx] = (diff * g).sum(axis=1)
            matched[idx, 0] = ex
            matched[idx, 1] = ey
            valid[idx] = True
    return SegmentProjection(px, z, residuals, matched, valid)


# ---------------------------------------------------------------------------
# Problem construction
# ---------------------------------------------------------------------------


@dataclass
class BAProblem:
    """Residual graph over pose increments and curve latent blocks."""

    frames: dict  # frame_id -> CameraFrame
    curves: dict  # curve_id -> PolybezierCurve
    observations: list  # (curve_id, seg_idx, frame_id, pose_coupled)
    opt_pose_ids: list
    opt_curve_ids: list
    cfg: PipelineConfig


def build_problem(
    graph,
    frames: dict,
    curves: dict,
    cfg: PipelineConfig,
    optimize_poses: bool = True,
    optimize_curves: bool = True,
    window_frames=None,
    fixed_frames=(),
    curve_ids=None,
) -> BAProblem:
    """Assemble a BAProblem from the correspondence graph.

    ``graph`` provides iter_observations(curve_ids) yielding
    (curve_id, seg_idx, frame_id) for accepted correspondences, and
    segment_obs_count(curve_id, seg_idx). Observations of segments with
    fewer than three keyframe observations stay in the problem but are
    decoupled from pose updates. ``window_frames`` limits residuals to
    those frames; ``fixed_frames`` are kept constant (gauge).
    """
    if curve_ids is None:
        curve_ids = graph.active_curve_ids()
    window = None if window_frames is None else set(window_frames)
    observations = []
    coupled_frames = set()
    used_curves = []
    for cid in curve_ids:
        if cid not in curves:
            continue
        any_obs = False
        for sid, fid in graph.iter_segment_observations(cid):
            if fid not in frames:
                continue
            if window is not None and fid not in window:
                continue
            coupled = graph.segment_obs_count(cid, sid) >= cfg.min_obs_promote
            observations.append((cid, sid, fid, coupled))
            if coupled:
                coupled_frames.add(fid)
            any_obs = True
        if any_obs:
            used_curves.append(cid)
    if not observations:
        raise ValueError("empty problem: no correspondences in scope")
    opt_pose_ids = (
        sorted(fid for fid in coupled_frames if fid not in set(fixed_frames))
        if optimize_poses
        else []
    )
    opt_curve_ids = sorted(used_curves) if optimize_curves else []
    return BAProblem(frames, curves, observations, opt_pose_ids, opt_curve_ids, cfg)


# ---------------------------------------------------------------------------
# Levenberg-Marquardt solver
# ---------------------------------------------------------------------------


@dataclass
class LMReport:
    rows: list = field(default_factory=list)  # per-iteration dicts
    status: str = ""
    cost: float = np.nan
    e_geo: float = np.nan
    e_s1: float = np.nan
    e_s2: float = np.nan
    mean_abs_geo: float = np.nan
    n_geo: int = 0
    iterations: int = 0
    misses: list = field(default_factory=list)  # (curve, seg, frame) mostly-unmatched


class _Layout:
    """Flat parameter layout: poses first (6 each), then per-curve latents."""

    def __init__(self, problem: BAProblem):
        self.pose_off = {}
        off = 0
        for fid in problem.opt_pose_ids:
            self.pose_off[fid] = off
            off += 6
        self.curve_off = {}
        self.curve_n = {}
        for cid in problem.opt_curve_ids:
            n = problem.curves[cid].params.segment_count
            self.curve_off[cid] = off
            self.curve_n[cid] = n
            off += 5 * (n + 1) + 2 * n
        self.size = off

    def q_cols(self, cid, link):
        base = self.curve_off[cid] + 3 * link
        return np.arange(base, base + 3)

    def th_cols(self, cid, link):
        n = self.curve_n[cid]
        base = self.curve_off[cid] + 3 * (n + 1) + 2 * link
        return np.arange(base, base + 2)

    def d_cols(self, cid, seg):
        n = self.curve_n[cid]
        base = self.curve_off[cid] + 5 * (n + 1) + 2 * seg
        return np.arange(base, base + 2)


class _State:
    def __init__(self, problem: BAProblem):
        self.poses = {fid: problem.frames[fid].pose.copy() for fid in problem.opt_pose_ids}
        self.params = {cid: problem.curves[cid].params.copy() for cid in problem.opt_curve_ids}

    def pose(self, problem, fid) -> Pose:
        return self.poses.get(fid, problem.frames[fid].pose)

    def curve(self, problem, cid) -> PolybezierParams:
        return self.params.get(cid, problem.curves[cid].params)

    def stepped(self, problem, layout: _Layout, delta: np.ndarray) -> "_State":
        out = _State.__new__(_State)
        out.poses = {
            fid: pose_retract(pose, delta[layout.pose_off[fid] : layout.pose_off[fid] + 6])
            for fid, pose in self.poses.items()
        }
        out.params = {}
        for cid, params in self.params.items():
            n = params.segment_count
            p = params.copy()
            base = layout.curve_off[cid]
            p.link_points += delta[base : base + 3 * (n + 1)].reshape(n + 1, 3)
            p.link_angles += delta[base + 3 * (n + 1) : base + 5 * (n + 1)].reshape(n + 1, 2)
            p.handle_lengths += delta[base + 5 * (n + 1) : base + 5 * (n + 1) + 2 * n].reshape(n, 2)
            p.clamp_handles()
            out.params[cid] = p
        return out


def _segment_cache(params: PolybezierParams, seg_idx: int):
    q0 = params.link_points[seg_idx]
    q1 = params.link_points[seg_idx + 1]
    th0 = params.link_angles[seg_idx]
    th1 = params.link_angles[seg_idx + 1]
    r00 = params.pre_rotations[seg_idx]
    r01 = params.pre_rotations[seg_idx + 1]
    v0 = direction_from_angles(r00, th0)
    v1 = direction_from_angles(r01, th1)
    d1, d2 = params.handle_lengths[seg_idx]
    ctrl = np.stack([q0, q0 + d1 * v0, q1 - d2 * v1, q1])
    return ctrl, v0, v1, direction_jacobian(r00, th0), direction_jacobian(r01, th1), d1, d2


def _assemble(problem: BAProblem, state: _State, layout: _Layout, with_jac: bool):
    """Residuals, IRLS weights, and (optionally) the sparse Jacobian."""
    cfg = problem.cfg
    s = cfg.samples_per_segment
    t = np.arange(s + 1) / s
    b = bernstein_weights(t)  # (s+1, 4)

    res, wgt, kinds = [], [], []
    jr, jc, jv = [], [], []
    row = 0
    misses = []
    n_geo_total = 0
    abs_geo_sum = 0.0

    seg_cache: dict = {}
    for cid, sid, fid, coupled in problem.observations:
        key = (cid, sid)
        if key not in seg_cache:
            seg_cache[key] = _segment_cache(state.curve(problem, cid), sid)
        ctrl, v0, v1, dv0, dv1, d1, d2 = seg_cache[key]
        frame = problem.frames[fid]
        pose = state.pose(problem, fid)
        intr = frame.intrinsics
        world = b @ ctrl
        x_c = (world - pose.t_w) @ pose.r_w
        z = x_c[:, 2]
        front = z > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            px = np.stack(
                [intr.fx * x_c[:, 0] / z + intr.cx, intr.fy * x_c[:, 1] / z + intr.cy],
                axis=1,
            )
        h, w_img = frame.nn.shape
        xi = np.where(front, np.rint(px[:, 0]), -1.0)
        yi = np.where(front, np.rint(px[:, 1]), -1.0)
        inb = front & (xi >= 0) & (xi < w_img) & (yi >= 0) & (yi < h)
        xi = xi.astype(int)
        yi = yi.astype(int)
        sel = np.zeros(s + 1, dtype=bool)
        if inb.any():
            ex = frame.nn.nearest_x[yi[inb], xi[inb]]
            sel[np.nonzero(inb)[0][ex >= 0]] = True
        n_drop = (s + 1) - int(sel.sum())
        if n_drop > (s + 1) / 2:
            misses.append((cid, sid, fid))
        if not sel.any():
            continue

        ex = frame.nn.nearest_x[yi[sel], xi[sel]]
        ey = frame.nn.nearest_y[yi[sel], xi[sel]]
        g = frame.edges.grad_dir[ey, ex]  # (m, 2)
        diff = px[sel] - frame.edges.subpix[ey, ex]
        r = (diff * g).sum(axis=1)
        m = r.shape[0]
        res.append(r)
        wgt.append(huber_weight(r, cfg.huber_delta))
        kinds.append(np.zeros(m, dtype=int))
        n_geo_total += m
        abs_geo_sum += float(np.abs(r).sum())

        if with_jac:
            zc = z[sel]
            a = np.stack(
                [
                    g[:, 0] * intr.fx / zc,
                    g[:, 1] * intr.fy / zc,
                    -(g[:, 0] * intr.fx * x_c[sel, 0] + g[:, 1] * intr.fy * x_c[sel, 1])
                    / (zc * zc),
                ],
                axis=1,
            )
            dxw = a @ pose.r_w.T  # (m, 3) = d residual / d world point
            rows_m = row + np.arange(m)
            bsel = b[sel]
            if cid in layout.curve_off:
                c01 = (bsel[:, 0] + bsel[:, 1])[:, None] * dxw
                c23 = (bsel[:, 2] + bsel[:, 3])[:, None] * dxw
                th0_j = (bsel[:, 1] * d1)[:, None] * (dxw @ dv0)
                th1_j = (-bsel[:, 2] * d2)[:, None] * (dxw @ dv1)
                dd1 = bsel[:, 1] * (dxw @ v0)
                dd2 = -bsel[:, 2] * (dxw @ v1)
                cols = np.concatenate(
                    [
                        layout.q_cols(cid, sid),
                        layout.q_cols(cid, sid + 1),
                        layout.th_cols(cid, sid),
                        layout.th_cols(cid, sid + 1),
                        layout.d_cols(cid, sid),
                    ]
                )
                vals = np.concatenate(
                    [c01, c23, th0_j, th1_j, dd1[:, None], dd2[:, None]], axis=1
                )
                jr.append(np.repeat(rows_m, cols.size))
                jc.append(np.tile(cols, m))
                jv.append(vals.ravel())
            if coupled and fid in layout.pose_off:
                dw = np.cross(dxw, world[sel] - pose.t_w)
                cols = layout.pose_off[fid] + np.arange(6)
                vals = np.concatenate([dw, -dxw], axis=1)
                jr.append(np.repeat(rows_m, 6))
                jc.append(np.tile(cols, m))
                jv.append(vals.ravel())
        row += m

    # regularizers for optimized curves
    for cid in problem.opt_curve_ids:
        params = state.curve(problem, cid)
        l0 = problem.curves[cid].init_lengths
        n = params.segment_count
        for i in range(n):
            qd = params.link_points[i] - params.link_points[i + 1]
            dist = float(np.linalg.norm(qd))
            res.append(np.array([dist - l0[i]]))
            wgt.append(np.array([2.0 * cfg.lambda1]))
            kinds.append(np.array([1]))
            if with_jac:
                u = qd / dist if dist > 1e-12 else np.zeros(3)
                jr.append(np.full(6, row))
                jc.append(np.concatenate([layout.q_cols(cid, i), layout.q_cols(cid, i + 1)]))
                jv.append(np.concatenate([u, -u]))
            row += 1

            chord = -qd
            cn = float(np.linalg.norm(chord))
            if cn < 1e-12:
                continue
            chat = chord / cn
            for link in (i, i + 1):
                v = direction_from_angles(params.pre_rotations[link], params.link_angles[link])
                dvj = direction_jacobian(params.pre_rotations[link], params.link_angles[link])
                cosr = float(np.clip(chat @ v, -1.0 + 1e-12, 1.0 - 1e-12))
                ang = float(np.arccos(cosr))
                res.append(np.array([ang]))
                wgt.append(np.array([2.0 * cfg.lambda2]))
                kinds.append(np.array([2]))
                if with_jac:
                    dacos = -1.0 / max(np.sqrt(1.0 - cosr * cosr), 1e-6)
                    wvec = (v - cosr * chat) / cn  # d(chat.v)/d chord
                    jr.append(np.full(8, row))
                    jc.append(
                        np.concatenate(
                            [
                                layout.q_cols(cid, i),
                                layout.q_cols(cid, i + 1),
                                layout.th_cols(cid, link),
                            ]
                        )
                    )
                    jv.append(
                        np.concatenate([-dacos * wvec, dacos * wvec, dacos * (chat @ dvj)])
                    )
                row += 1

    r_all = np.concatenate(res) if res else np.zeros(0)
    w_all = np.concatenate(wgt) if wgt else np.zeros(0)
    k_all = np.concatenate(kinds) if kinds else np.zeros(0, dtype=int)
    jac = None
    if with_jac:
        jac = sparse.csr_matrix(
            (np.concatenate(jv) if jv else np.zeros(0),
             (np.concatenate(jr) if jr else np.zeros(0, dtype=int),
              np.concatenate(jc) if jc else np.zeros(0, dtype=int))),
            shape=(row, layout.size),
        )

    geo = k_all == 0
    e_geo = float(huber_vec(r_all[geo], cfg.huber_delta).sum())
    e_s1 = float((r_all[k_all == 1] ** 2).sum())
    e_s2 = float((r_all[k_all == 2] ** 2).sum())
    stats = {
        "e_geo": e_geo,
        "e_s1": e_s1,
        "e_s2": e_s2,
        "cost": e_geo + cfg.lambda1 * e_s1 + cfg.lambda2 * e_s2,
        "n_geo": n_geo_total,
        "mean_abs_geo": abs_geo_sum / max(n_geo_total, 1),
        "misses": misses,
    }
    return r_all, w_all, jac, stats


def solve_lm(
    problem: BAProblem,
    max_iters: int | None = None,
    tol_cost: float | None = None,
    tol_grad: float | None = None,
) -> LMReport:
    """Run LM to convergence and write results back into the problem objects.

    Stops on relative cost change, gradient norm, iteration cap, or damping
    blow-up; accepted steps never increase the cost.
    """
    cfg = problem.cfg
    max_iters = max_iters if max_iters is not None else cfg.lm_max_iters
    tol_cost = tol_cost if tol_cost is not None else cfg.lm_tol_cost
    tol_grad = tol_grad if tol_grad is not None else cfg.lm_tol_grad

    layout = _Layout(problem)
    state = _State(problem)
    report = LMReport()

    if layout.size == 0:
        raise ValueError("nothing to optimize: no active parameter blocks")

    r, w, jac, stats = _assemble(problem, state, layout, with_jac=True)
    cost = stats["cost"]
    if not np.isfinite(cost):
        raise ValueError("non-finite cost at start")
    mu = cfg.lm_damping_init
    report.status = "max_iters"

    for it in range(max_iters):
        grad = jac.T @ (w * r)
        if np.abs(grad).max() <= tol_grad:
            report.status = "gradient"
            break
        h_mat = (jac.T @ jac.multiply(w[:, None])).tocsc()
        diag = np.maximum(h_mat.diagonal(), 1e-12)

        accepted = False
        any_solve_ok = False
        while mu <= cfg.lm_damping_max:
            h_damped = h_mat + sparse.diags(mu * diag)
            try:
                if layout.size <= _DENSE_SOLVE_LIMIT:
                    delta = np.linalg.solve(h_damped.toarray(), -grad)
                else:
                    delta = spsolve(h_damped, -grad)
                if not np.all(np.isfinite(delta)):
                    raise np.linalg.LinAlgError("non-finite step")
            except np.linalg.LinAlgError:
                mu *= 4.0
                continue
            any_solve_ok = True
            cand = state.stepped(problem, layout, delta)
            _, _, _, cand_stats = _assemble(problem, cand, layout, with_jac=False)
            if cand_stats["cost"] < cost:
                rel = (cost - cand_stats["cost"]) / max(cost, 1e-300)
                state = cand
                cost = cand_stats["cost"]
                stats = cand_stats
                mu = max(mu / 3.0, 1e-12)
                accepted = True
                report.rows.append(
                    {
                        "iteration": it,
                        "cost": cost,
                        "e_geo": stats["e_geo"],
                        "e_s1": stats["e_s1"],
                        "e_s2": stats["e_s2"],
                        "damping": mu,
                        "step_norm": float(np.linalg.norm(delta)),
                    }
                )
                break
            mu *= 4.0
        if not accepted:
            if not any_solve_ok:
                raise RuntimeError("linear solve failed at maximum damping")
            report.status = "max_damping"
            break
        report.iterations = it + 1
        if rel < tol_cost:
            report.status = "converged"
            break
        r, w, jac, stats = _assemble(problem, state, layout, with_jac=True)

    # final stats at the accepted state (with fresh lookups)
    _, _, _, stats = _assemble(problem, state, layout, with_jac=False)
    report.cost = stats["cost"]
    report.e_geo = stats["e_geo"]
    report.e_s1 = stats["e_s1"]
    report.e_s2 = stats["e_s2"]
    report.mean_abs_geo = stats["mean_abs_geo"]
    report.n_geo = stats["n_geo"]
    report.misses = stats["misses"]

    for fid, pose in state.poses.items():
        problem.frames[fid].pose = pose
    for cid, params in state.params.items():
        problem.curves[cid].params = params
    return report


def write_report_csv(path, labeled_rows) -> None:
    """labeled_rows: iterable of (phase, row_dict) in solve order."""
    lines = ["phase,iteration,cost,e_geo,e_s1,e_s2,damping,step_norm"]
    for phase, row in labeled_rows:
        lines.append(
            f"{phase},{row['iteration']},"
            + ",".join(
                format(row[k], ".9g")
                for k in ("cost", "e_geo", "e_s1", "e_s2", "damping", "step_norm")
            )
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
