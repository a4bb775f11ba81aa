"""Shared builders for BA/correspondence tests: exact synthetic edge maps."""

import numpy as np

from curveba.camera import Intrinsics, Pose, project
from curveba.curves import (
    PolybezierCurve,
    PolybezierParams,
    chord_lengths,
    evaluate_bezier,
    segments_from_params,
)
from curveba.edges import EdgeImage, NNField, build_nn_field
from curveba.frame import CameraFrame
from curveba.rotations import rotation_aligning_z


class ScriptedGraph:
    """Duck-typed stand-in for CorrespondenceGraph in solver tests."""

    def __init__(self, obs, obs_count_override=None):
        self.obs = obs  # cid -> list of (sid, fid)
        self.obs_count_override = obs_count_override

    def active_curve_ids(self):
        return sorted(self.obs)

    def iter_segment_observations(self, cid):
        yield from self.obs[cid]

    def segment_obs_count(self, cid, sid):
        if self.obs_count_override is not None:
            return self.obs_count_override
        return sum(1 for s, _ in self.obs[cid] if s == sid)


def default_intr():
    return Intrinsics(300.0, 300.0, 159.5, 119.5, 320, 240)


def straight_curve(world_a, world_b, curve_id=0):
    """Single-segment polybezier from a to b with collinear handles."""
    a = np.asarray(world_a, dtype=float)
    b = np.asarray(world_b, dtype=float)
    v = (b - a) / np.linalg.norm(b - a)
    r0 = np.stack([rotation_aligning_z(v)] * 2)
    d = np.linalg.norm(b - a) / 3.0
    params = PolybezierParams(
        np.stack([a, b]), np.zeros((2, 2)), r0, np.array([[d, d]])
    )
    return PolybezierCurve(
        curve_id=curve_id,
        params=params,
        init_lengths=chord_lengths(params),
        origin_frame=0,
        view_dir=np.array([0.0, 0.0, 1.0]),
    )


def frame_from_mask(frame_id, intr, pose, mask, grad_dir, hsv=None, gray=None, radius=15.0):
    h, w = mask.shape
    edges = EdgeImage(
        mask=mask,
        grad_dir=grad_dir,
        hsv=hsv if hsv is not None else np.zeros((h, w, 3)),
    )
    return CameraFrame(
        frame_id=frame_id,
        intrinsics=intr,
        pose=pose,
        gray=gray if gray is not None else np.zeros((h, w)),
        edges=edges,
        nn=build_nn_field(mask, radius=radius),
        chains=[],
    )


def render_curves_frame(frame_id, intr, pose, curves, radius=15.0, hsv_value=None):
    """Exact synthetic observation: rasterize curve projections as edge pixels.

    Every dense curve sample is rounded to its pixel; the stored gradient is
    the unit normal of the projected tangent, so the rendered map behaves
    like an ideal edge image of the 3D curves under this pose.
    """
    h, w = intr.height, intr.width
    mask = np.zeros((h, w), dtype=bool)
    grad = np.zeros((h, w, 2))
    for curve in curves:
        for seg in segments_from_params(curve.params):
            t = np.linspace(0.0, 1.0, 400)
            px, z = project(evaluate_bezier(seg, t), intr, pose)
            ok = z > 0
            px = px[ok]
            tang = np.gradient(px, axis=0)
            nrm = np.linalg.norm(tang, axis=1, keepdims=True)
            tang = tang / np.maximum(nrm, 1e-12)
            normal = np.column_stack([-tang[:, 1], tang[:, 0]])
            xi = np.rint(px[:, 0]).astype(int)
            yi = np.rint(px[:, 1]).astype(int)
            inb = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            mask[yi[inb], xi[inb]] = True
            grad[yi[inb], xi[inb]] = normal[inb]
    hsv = None
    if hsv_value is not None:
        hsv = np.zeros((h, w, 3))
        hsv[...] = hsv_value
    return frame_from_mask(frame_id, intr, pose, mask, grad, hsv=hsv, radius=radius)


def pix2world(px, depth, intr, pose=None):
    pose = pose or Pose.identity()
    x = (px[0] - intr.cx) / intr.fx * depth
    y = (px[1] - intr.cy) / intr.fy * depth
    return pose.cam_to_world(np.array([x, y, depth]))


def vertical_line_frame(frame_id, intr, col, pose=None, rows=(20, 220), grad_sign=1.0):
    """Edge map with one vertical line at integer column ``col``."""
    pose = pose or Pose.identity()
    h, w = intr.height, intr.width
    mask = np.zeros((h, w), dtype=bool)
    mask[rows[0] : rows[1], col] = True
    grad = np.zeros((h, w, 2))
    grad[mask] = (grad_sign, 0.0)
    return frame_from_mask(frame_id, intr, pose, mask, grad)


def _view_line_plane(intr, pose, kind, value):
    """World plane of all rays through a pixel column ('col') or row ('row')."""
    if kind == "col":
        pix = np.array([[value, 0.0], [value, 100.0]])
    else:
        pix = np.array([[0.0, value], [100.0, value]])
    k_inv = np.linalg.inv(intr.k_matrix())
    dirs = (np.column_stack([pix, np.ones(2)]) @ k_inv.T) @ pose.r_w.T
    n = np.cross(dirs[0], dirs[1])
    return pose.center(), n / np.linalg.norm(n)


def exact_line_scene(intr, pose1, specs, rows_margin=25):
    """Curves whose projections are exact integer pixel lines in both frames.

    Each spec is (kind, v0, depth): the curve is the 3D intersection of the
    back-projected plane of pixel line v0 in the identity frame and of the
    nearest integer pixel line in ``pose1`` at the given depth. Because the
    rendered edge pixels lie exactly on those image lines, every geometric
    residual is exactly zero at ground truth. Returns (curves, frames) with
    masks containing all curves.
    """
    from curveba.camera import backproject

    pose0 = Pose.identity()
    h, w = intr.height, intr.width
    masks = [np.zeros((h, w), dtype=bool) for _ in range(2)]
    grads = [np.zeros((h, w, 2)) for _ in range(2)]
    curves = {}
    for cid, (kind, v0, depth, span_lo, span_hi) in enumerate(specs):
        mid_px = np.array([v0, intr.cy] if kind == "col" else [intr.cx, v0], dtype=float)
        anchor = backproject(mid_px, np.array(float(depth)), intr, pose0)
        px1_mid, _ = project(anchor, intr, pose1)
        v1 = int(np.rint(px1_mid[0] if kind == "col" else px1_mid[1]))
        c0, n0 = _view_line_plane(intr, pose0, kind, v0)
        c1, n1 = _view_line_plane(intr, pose1, kind, v1)
        u = np.cross(n0, n1)
        u = u / np.linalg.norm(u)
        a_mat = np.stack([n0, n1])
        b_vec = np.array([n0 @ c0, n1 @ c1])
        # particular point on the line near the visible anchor
        corr, *_ = np.linalg.lstsq(a_mat, b_vec - a_mat @ anchor, rcond=None)
        x0 = anchor + corr
        t = np.linspace(-6.0, 6.0, 4001)
        pts = x0[None, :] + t[:, None] * u[None, :]
        px0, z0 = project(pts, intr, pose0)
        px1, z1 = project(pts, intr, pose1)
        vary = px0[:, 1] if kind == "col" else px0[:, 0]
        ok = (
            (z0 > 0.3)
            & (z1 > 0.3)
            & (vary >= span_lo)
            & (vary <= span_hi)
            & (px1 >= rows_margin).all(axis=1)
            & (px1[:, 0] <= w - 1 - rows_margin)
            & (px1[:, 1] <= h - 1 - rows_margin)
        )
        idx = np.nonzero(ok)[0]
        assert idx.size > 50, f"spec {cid}: no visible span"
        lo, hi = idx[0], idx[-1]
        span = hi - lo
        lo += span // 8
        hi -= span // 8
        curves[cid] = straight_curve(pts[lo], pts[hi], cid)
        for view, (val, px) in enumerate(((v0, px0), (v1, px1))):
            sel = px[lo : hi + 1]
            if kind == "col":
                y_lo = max(0, int(sel[:, 1].min()) - 8)
                y_hi = min(h - 1, int(sel[:, 1].max()) + 8)
                patch = masks[view][y_lo : y_hi + 1, val]
                assert not patch.any(), f"spec {cid}: overlapping image lines"
                masks[view][y_lo : y_hi + 1, val] = True
                grads[view][y_lo : y_hi + 1, val] = (1.0, 0.0)
            else:
                x_lo = max(0, int(sel[:, 0].min()) - 8)
                x_hi = min(w - 1, int(sel[:, 0].max()) + 8)
                patch = masks[view][val, x_lo : x_hi + 1]
                assert not patch.any(), f"spec {cid}: overlapping image lines"
                masks[view][val, x_lo : x_hi + 1] = True
                grads[view][val, x_lo : x_hi + 1] = (0.0, 1.0)
    frames = {
        0: frame_from_mask(0, intr, pose0, masks[0], grads[0]),
        1: frame_from_mask(1, intr, pose1, masks[1], grads[1]),
    }
    return curves, frames
