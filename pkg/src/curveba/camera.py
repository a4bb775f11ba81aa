"""Pinhole camera, rigid poses with a local update, and 7-DoF alignment.

Poses store the camera-to-world transform (R_w, t_w): a camera-frame point x
maps to the world as R_w x + t_w, so t_w is the camera center. Projection
applies the inverse on demand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rotations import quat_from_rotation, rotation_exp, rotation_from_quat


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")

    def k_matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.fx, 0.0, self.cx],
                [0.0, self.fy, self.cy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass
class Pose:
    """Camera-to-world rigid transform."""

    r_w: np.ndarray
    t_w: np.ndarray

    def __post_init__(self):
        self.r_w = np.asarray(self.r_w, dtype=float)
        self.t_w = np.asarray(self.t_w, dtype=float)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def copy(self) -> "Pose":
        return Pose(self.r_w.copy(), self.t_w.copy())

    def center(self) -> np.ndarray:
        return self.t_w

    def world_to_cam(self, x_w: np.ndarray) -> np.ndarray:
        x_w = np.asarray(x_w, dtype=float)
        return (x_w - self.t_w) @ self.r_w

    def cam_to_world(self, x_c: np.ndarray) -> np.ndarray:
        x_c = np.asarray(x_c, dtype=float)
        return x_c @ self.r_w.T + self.t_w


def backproject(p, d, intr: Intrinsics, pose: Pose) -> np.ndarray:
    """Lift pixel(s) p at principal-axis depth(s) d into world coordinates.

    Supports a single pixel (shape (2,)) or a batch (n, 2) with matching d.
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0.0):
        raise ValueError("depth must be positive")
    x = (p[..., 0] - intr.cx) / intr.fx
    y = (p[..., 1] - intr.cy) / intr.fy
    ray = np.stack([x, y, np.ones_like(x)], axis=-1)
    return pose.cam_to_world(ray * d[..., None])


def project(x_w, intr: Intrinsics, pose: Pose):
    """Project world point(s) to (pixel, depth).

    The depth is the camera-frame z coordinate; a non-positive value flags a
    point at or behind the camera (the pixel is then meaningless). Points
    projecting outside the image are returned as-is.
    """
    x_c = pose.world_to_cam(x_w)
    z = x_c[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = intr.fx * x_c[..., 0] / z + intr.cx
        py = intr.fy * x_c[..., 1] / z + intr.cy
    return np.stack([px, py], axis=-1), z


def pose_retract(pose: Pose, delta) -> Pose:
    """Apply a 6-vector local update: exp-map rotation (left-multiplied on the
    camera-to-world rotation) from delta[:3], world translation from delta[3:]."""
    delta = np.asarray(delta, dtype=float)
    return Pose(rotation_exp(delta[:3]) @ pose.r_w, pose.t_w + delta[3:])


# ---------------------------------------------------------------------------
# 7-DoF trajectory alignment
# ---------------------------------------------------------------------------


@dataclass
class Similarity:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return self.scale * (pts @ self.rotation.T) + self.translation


def sim3_align(est: np.ndarray, gt: np.ndarray) -> Similarity:
    """Closed-form similarity minimizing sum |s R est_i + t - gt_i|^2.

    Standard SVD-based least-squares alignment. Requires at least three
    non-collinear point pairs.
    """
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape or est.ndim != 2 or est.shape[1] != 3:
        raise ValueError("trajectories must be matching (n, 3) arrays")
    n = est.shape[0]
    if n < 3:
        raise ValueError("need at least 3 point pairs")
    mu_e = est.mean(axis=0)
    mu_g = gt.mean(axis=0)
    xe = est - mu_e
    xg = gt - mu_g
    cov = xg.T @ xe / n
    u, d, vt = np.linalg.svd(cov)
    if d[1] < 1e-12 * max(d[0], 1e-300):
        raise ValueError("degenerate (collinear) trajectory configuration")
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0.0:
        s_fix[2, 2] = -1.0
    rot = u @ s_fix @ vt
    var_e = (xe**2).sum() / n
    scale = float(np.trace(np.diag(d) @ s_fix) / var_e)
    if scale <= 0.0:
        raise ValueError("alignment produced a non-positive scale")
    trans = mu_g - scale * rot @ mu_e
    return Similarity(scale, rot, trans)


# ---------------------------------------------------------------------------
# Trajectory text format: "timestamp tx ty tz qx qy qz qw" per line
# ---------------------------------------------------------------------------


def write_pose_file(path, poses, timestamps=None) -> None:
    poses = list(poses)
    if timestamps is None:
        timestamps = [float(i) for i in range(len(poses))]
    lines = []
    for ts, pose in zip(timestamps, poses):
        q = quat_from_rotation(pose.r_w)
        vals = [ts, *pose.t_w, *q]
        lines.append(" ".join(format(float(v), ".9g") for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_pose_file(path):
    """Returns (timestamps, poses); quaternion is Hamilton with w last."""
    timestamps = []
    poses = []
    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            vals = [float(v) for v in ln.split()]
            if len(vals) != 8:
                raise ValueError(f"bad trajectory line: {ln!r}")
            timestamps.append(vals[0])
            poses.append(Pose(rotation_from_quat(np.array(vals[4:8])), np.array(vals[1:4])))
    return timestamps, poses
