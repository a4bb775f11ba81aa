"""Synthetic benchmark: planar homography orbits with noise, plus trajectory metrics.

A textured plane sits at z=0; cameras are placed on a circle above it, each
looking at the plane center. Every view is an exact homography warp of the
texture, so depth, poses, and pixel correspondences are all known in closed
form.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, Pose, read_pose_file, sim3_align, write_pose_file
from .imgio import bilinear_sample, read_image, write_image


@dataclass
class SyntheticScene:
    texture: np.ndarray
    intrinsics: Intrinsics
    plane_scale: float  # world units per texture pixel
    plane_offset: np.ndarray  # world (x, y) of texture pixel (0, 0)
    poses: list[Pose]
    views: list[np.ndarray]
    homographies: list[np.ndarray]  # texture px -> view px
    noise_level: float = 0.0
    seed: int = 0


def look_at_pose(center: np.ndarray, target: np.ndarray, up_hint=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose at ``center`` with the optical axis toward ``target``."""
    center = np.asarray(center, dtype=float)
    fwd = np.asarray(target, dtype=float) - center
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up_hint, dtype=float)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    # columns are the camera axes (x right, y down, z forward) in world coords
    return Pose(np.stack([right, down, fwd], axis=1), center)


def texture_to_plane(texture_shape, plane_width: float = 1.0) -> tuple[float, np.ndarray]:
    """Scale/offset mapping texture pixels onto a centered plane patch at z=0.

    The texture width spans ``plane_width`` world units; aspect is preserved.
    """
    th, tw = texture_shape[:2]
    scale = plane_width / (tw - 1)
    offset = np.array([-(tw - 1) / 2.0 * scale, -(th - 1) / 2.0 * scale])
    return scale, offset


def plane_homography(intr: Intrinsics, pose: Pose, plane_scale: float, plane_offset) -> np.ndarray:
    """Exact homography mapping texture pixels to view pixels for the z=0 plane."""
    r_cw = pose.r_w.T
    t_cw = -r_cw @ pose.t_w
    k = intr.k_matrix()
    plane_to_img = k @ np.column_stack([r_cw[:, 0], r_cw[:, 1], t_cw])
    tex_to_plane = np.array(
        [
            [plane_scale, 0.0, plane_offset[0]],
            [0.0, plane_scale, plane_offset[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return plane_to_img @ tex_to_plane


def warp_homography(image: np.ndarray, h_mat: np.ndarray, out_shape, background: float = 0.0) -> np.ndarray:
    """Inverse-warp ``image`` through the homography (source px -> output px).

    Bilinear sampling; output pixels mapping outside the source get
    ``background``. Returns float64 regardless of input dtype.
    """
    oh, ow = out_shape
    h_inv = np.linalg.inv(h_mat)
    xs, ys = np.meshgrid(np.arange(ow, dtype=float), np.arange(oh, dtype=float))
    denom = h_inv[2, 0] * xs + h_inv[2, 1] * ys + h_inv[2, 2]
    sx = (h_inv[0, 0] * xs + h_inv[0, 1] * ys + h_inv[0, 2]) / denom
    sy = (h_inv[1, 0] * xs + h_inv[1, 1] * ys + h_inv[1, 2]) / denom
    return bilinear_sample(np.asarray(image, dtype=float), sx, sy, background)


def generate_orbit(
    texture: np.ndarray,
    n_views: int,
    orbit_radius: float,
    orbit_height: float,
    intr: Intrinsics,
    plane_width: float = 1.0,
) -> SyntheticScene:
    """Render ``n_views`` cameras uniformly spaced on a circle above the plane."""
    if n_views < 2:
        raise ValueError("need at least 2 views")
    if orbit_height <= 0.0:
        raise ValueError("camera must be above the plane")
    texture = np.asarray(texture)
    scale, offset = texture_to_plane(texture.shape, plane_width)
    poses = []
    views = []
    homs = []
    for k in range(n_views):
        ang = 2.0 * np.pi * k / n_views
        center = np.array(
            [orbit_radius * np.cos(ang), orbit_radius * np.sin(ang), orbit_height]
        )
        pose = look_at_pose(center, np.zeros(3))
        h_mat = plane_homography(intr, pose, scale, offset)
        view = warp_homography(texture, h_mat, (intr.height, intr.width))
        poses.append(pose)
        views.append(np.clip(np.rint(view), 0, 255).astype(np.uint8))
        homs.append(h_mat)
    return SyntheticScene(
        texture=texture,
        intrinsics=intr,
        plane_scale=scale,
        plane_offset=offset,
        poses=poses,
        views=views,
        homographies=homs,
    )


def add_noise(view: np.ndarray, level: float, seed: int, model: str = "uniform") -> np.ndarray:
    """Per-pixel intensity disturbance of amplitude level*255, clamped to [0, 255].

    ``model`` is "uniform" (amplitude = level*255) or "gaussian"
    (sigma = level*255/2). Deterministic for a fixed seed.
    """
    if not 0.0 <= level <= 0.2:
        raise ValueError("noise level must be in [0, 0.2]")
    view = np.asarray(view)
    if level == 0.0:
        return view.copy()
    rng = np.random.default_rng(seed)
    amp = level * 255.0
    if model == "uniform":
        noise = rng.uniform(-amp, amp, size=view.shape)
    elif model == "gaussian":
        noise = rng.normal(0.0, amp / 2.0, size=view.shape)
    else:
        raise ValueError(f"unknown noise model {model!r}")
    return np.clip(np.rint(view.astype(np.float64) + noise), 0, 255).astype(np.uint8)


def trajectory_error(est: np.ndarray, gt: np.ndarray) -> tuple[float, float, float]:
    """(rmse, mean, median) of per-frame position error after 7-DoF alignment."""
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape:
        raise ValueError("trajectory length mismatch")
    sim = sim3_align(est, gt)
    err = np.linalg.norm(sim.apply(est) - gt, axis=1)
    return (
        float(np.sqrt(np.mean(err**2))),
        float(np.mean(err)),
        float(np.median(err)),
    )


def plane_point_world(tex_px, plane_scale: float, plane_offset) -> np.ndarray:
    """World coordinates of a texture pixel on the z=0 plane."""
    tex_px = np.asarray(tex_px, dtype=float)
    x = tex_px[..., 0] * plane_scale + plane_offset[0]
    y = tex_px[..., 1] * plane_scale + plane_offset[1]
    return np.stack([x, y, np.zeros_like(x)], axis=-1)


def plane_depth(pose: Pose, intr: Intrinsics, px) -> np.ndarray:
    """Ground-truth principal-axis depth of the z=0 plane at view pixel(s)."""
    px = np.asarray(px, dtype=float)
    x = (px[..., 0] - intr.cx) / intr.fx
    y = (px[..., 1] - intr.cy) / intr.fy
    ray = np.stack([x, y, np.ones_like(x)], axis=-1)
    ray_w = ray @ pose.r_w.T
    # z=0 plane: center_z + d * ray_z = 0
    return -pose.t_w[2] / ray_w[..., 2]


def make_texture(width: int = 640, height: int = 640, seed: int = 0) -> np.ndarray:
    """Procedural high-contrast test texture (RGB uint8).

    A light background with a few solid shapes: a disk, a ring, rectangles,
    and diagonal bars give closed contours and edges in many directions.
    """
    rng = np.random.default_rng(seed)
    img = np.full((height, width, 3), 235, dtype=np.uint8)
    yy, xx = np.mgrid[0:height, 0:width].astype(float)

    def paint(mask, color):
        img[mask] = color

    cx, cy = width * 0.30, height * 0.32
    r = min(width, height) * 0.16
    paint((xx - cx) ** 2 + (yy - cy) ** 2 <= r**2, (40, 60, 170))

    cx, cy = width * 0.72, height * 0.70
    r1, r2 = min(width, height) * 0.20, min(width, height) * 0.11
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    paint((d2 <= r1**2) & (d2 >= r2**2), (180, 50, 50))

    x0, y0 = width * 0.58, height * 0.12
    paint((xx >= x0) & (xx <= x0 + width * 0.30) & (yy >= y0) & (yy <= y0 + height * 0.16), (30, 130, 60))

    x0, y0 = width * 0.10, height * 0.62
    paint((xx >= x0) & (xx <= x0 + width * 0.24) & (yy >= y0) & (yy <= y0 + height * 0.26), (240, 180, 40))

    for k in range(3):
        c = (xx + yy - (0.9 + 0.35 * k) * width)
        paint((np.abs(c) < width * 0.012), (20, 20, 20))

    # mild smooth shading so flat regions are not exactly constant
    shade = 12.0 * np.sin(2 * np.pi * xx / width) * np.cos(2 * np.pi * yy / height)
    img = np.clip(img.astype(float) + shade[..., None] + rng.normal(0, 1.0, img.shape), 0, 255)
    return img.astype(np.uint8)


def perturb_positions(poses: list[Pose], amplitude: float, seed: int) -> list[Pose]:
    """Copy poses with camera centers shifted by uniform noise in [-amp, amp]^3."""
    rng = np.random.default_rng(seed)
    out = []
    for pose in poses:
        shift = rng.uniform(-amplitude, amplitude, size=3)
        out.append(Pose(pose.r_w.copy(), pose.t_w + shift))
    return out


# ---------------------------------------------------------------------------
# Scene manifest
# ---------------------------------------------------------------------------


def write_scene(scene: SyntheticScene, out_dir, noise_level: float, seed: int, model: str = "uniform") -> str:
    """Write noisy views, the GT pose file, and the manifest; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    view_names = []
    for k, view in enumerate(scene.views):
        noisy = add_noise(view, noise_level, seed + k, model=model)
        name = f"view_{k:03d}.png"
        write_image(os.path.join(out_dir, name), noisy)
        view_names.append(name)
    pose_path = os.path.join(out_dir, "poses_gt.txt")
    write_pose_file(pose_path, scene.poses)
    intr = scene.intrinsics
    lines = [
        "K "
        + " ".join(
            format(float(v), ".9g") for v in (intr.fx, intr.fy, intr.cx, intr.cy)
        )
        + f" {intr.width} {intr.height}",
        "poses poses_gt.txt",
        f"noise {format(noise_level, '.9g')}",
        f"seed {seed}",
    ] + [f"view {name}" for name in view_names]
    manifest = os.path.join(out_dir, "scene.txt")
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest


def read_manifest(path):
    """Parse a scene manifest; returns (intrinsics, pose_path, view_paths, noise, seed)."""
    base = os.path.dirname(os.path.abspath(path))
    intr = None
    pose_path = None
    views = []
    noise = 0.0
    seed = 0
    with open(path) as fh:
        for ln in fh:
            parts = ln.split()
            if not parts:
                continue
            if parts[0] == "K":
                fx, fy, cx, cy = (float(v) for v in parts[1:5])
                w, h = int(parts[5]), int(parts[6])
                intr = Intrinsics(fx, fy, cx, cy, w, h)
            elif parts[0] == "poses":
                pose_path = os.path.join(base, parts[1])
            elif parts[0] == "view":
                views.append(os.path.join(base, parts[1]))
            elif parts[0] == "noise":
                noise = float(parts[1])
            elif parts[0] == "seed":
                seed = int(parts[1])
    if intr is None or pose_path is None or not views:
        raise ValueError(f"incomplete scene manifest: {path}")
    return intr, pose_path, views, noise, seed


def load_scene_frames(manifest_path):
    """Convenience loader: (intrinsics, poses, images) from a manifest."""
    intr, pose_path, view_paths, _, _ = read_manifest(manifest_path)
    _, poses = read_pose_file(pose_path)
    images = [read_image(p) for p in view_paths]
    if len(poses) != len(images):
        raise ValueError("manifest pose/view count mismatch")
    return intr, poses, images
