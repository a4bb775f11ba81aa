"""Synthetic benchmark: homography orbit rendering, noise, trajectory metrics."""

import numpy as np
import pytest

from curveba.camera import Intrinsics, backproject, project
from curveba.rotations import rotation_exp
from curveba.synth import (
    add_noise,
    generate_orbit,
    make_texture,
    plane_depth,
    plane_homography,
    plane_point_world,
    read_manifest,
    texture_to_plane,
    trajectory_error,
    warp_homography,
    write_scene,
)


def smooth_texture(n=200):
    yy, xx = np.mgrid[0:n, 0:n].astype(float)
    img = 127.0 + 60.0 * np.sin(2 * np.pi * xx / 60.0) + 50.0 * np.cos(2 * np.pi * yy / 75.0)
    return np.clip(img, 0, 255)


class TestWarp:
    def test_identity_homography(self):
        tex = smooth_texture()
        out = warp_homography(tex, np.eye(3), tex.shape)
        np.testing.assert_allclose(out, tex, atol=1e-9)

    def test_round_trip_interior(self):
        tex = smooth_texture()
        h_mat = np.array([[0.9, 0.05, 12.0], [-0.04, 1.1, 5.0], [1e-4, -5e-5, 1.0]])
        warped = warp_homography(tex, h_mat, (240, 240), background=np.nan)
        back = warp_homography(warped, np.linalg.inv(h_mat), tex.shape, background=np.nan)
        interior = np.isfinite(back)
        interior[:20] = interior[-20:] = False
        interior[:, :20] = interior[:, -20:] = False
        assert interior.sum() > 1000
        assert np.abs(back[interior] - tex[interior]).max() <= 1.0


class TestOrbit:
    def test_homography_pose_consistency(self, small_scene, small_intr):
        # plane points must project identically through H and through the pose
        rng = np.random.default_rng(0)
        tex_pts = np.column_stack(
            [rng.uniform(50, 300, 20), rng.uniform(50, 300, 20)]
        )
        world = plane_point_world(tex_pts, small_scene.plane_scale, small_scene.plane_offset)
        for pose, h_mat in zip(small_scene.poses, small_scene.homographies):
            via_pose, z = project(world, small_intr, pose)
            assert (z > 0).all()
            ph = np.column_stack([tex_pts, np.ones(len(tex_pts))]) @ h_mat.T
            via_h = ph[:, :2] / ph[:, 2:]
            assert np.abs(via_pose - via_h).max() < 1e-9

    def test_poses_look_at_plane_center(self, small_scene):
        for pose in small_scene.poses:
            fwd = pose.r_w[:, 2]
            to_center = -pose.t_w / np.linalg.norm(pose.t_w)
            np.testing.assert_allclose(fwd, to_center, atol=1e-12)

    def test_plane_depth_matches_backprojection(self, small_scene, small_intr):
        pose = small_scene.poses[2]
        px = np.array([[100.0, 80.0], [200.0, 150.0]])
        d = plane_depth(pose, small_intr, px)
        world = backproject(px, d, small_intr, pose)
        np.testing.assert_allclose(world[:, 2], 0.0, atol=1e-12)

    def test_rejects_degenerate(self, small_intr):
        with pytest.raises(ValueError):
            generate_orbit(smooth_texture(), 1, 1.0, 1.5, small_intr)
        with pytest.raises(ValueError):
            generate_orbit(smooth_texture(), 4, 1.0, 0.0, small_intr)


class TestNoise:
    def test_zero_level_identity(self):
        img = make_texture(64, 64, seed=1)
        out = add_noise(img, 0.0, seed=5)
        np.testing.assert_array_equal(out, img)

    def test_amplitude_bound(self):
        img = np.full((50, 50), 128, dtype=np.uint8)
        out = add_noise(img, 0.2, seed=2)
        assert np.abs(out.astype(int) - 128).max() <= 51

    def test_deterministic(self):
        img = make_texture(64, 64, seed=1)
        a = add_noise(img, 0.1, seed=9)
        b = add_noise(img, 0.1, seed=9)
        np.testing.assert_array_equal(a, b)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            add_noise(np.zeros((4, 4), dtype=np.uint8), 0.3, seed=0)


class TestTrajectoryError:
    def test_identical(self):
        rng = np.random.default_rng(3)
        traj = rng.uniform(-1, 1, size=(8, 3))
        assert max(trajectory_error(traj, traj)) < 1e-12

    def test_sim3_absorbed(self):
        rng = np.random.default_rng(4)
        gt = rng.uniform(-1, 1, size=(10, 3))
        est = 2.5 * gt @ rotation_exp(np.array([0.1, 0.7, -0.3])).T + np.array([4.0, 1.0, -2.0])
        rmse, mean, median = trajectory_error(est, gt)
        assert max(rmse, mean, median) < 1e-9

    def test_known_offsets_oracle(self):
        # gauge-free check: alignment of est=gt is identity, so planted
        # residual offsets pass through; hand-compute rmse/mean/median
        gt = np.array(
            [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], dtype=float
        )
        offs = np.array([0.0, 0.01, 0.02, 0.02, 0.05])
        est = gt.copy()
        est[:, 0] += offs  # not gauge-free, so compare against aligned oracle
        rmse, mean, median = trajectory_error(est, gt)
        from curveba.camera import sim3_align

        sim = sim3_align(est, gt)
        err = np.linalg.norm(sim.apply(est) - gt, axis=1)
        np.testing.assert_allclose(
            (rmse, mean, median),
            (np.sqrt((err**2).mean()), err.mean(), np.median(err)),
            atol=1e-15,
        )

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            trajectory_error(np.zeros((4, 3)), np.zeros((5, 3)))


class TestManifest:
    def test_round_trip(self, tmp_path, small_scene):
        manifest = write_scene(small_scene, tmp_path / "scene", noise_level=0.05, seed=7)
        intr, pose_path, views, noise, seed = read_manifest(manifest)
        assert intr.width == 320 and intr.height == 240
        assert len(views) == 8
        assert noise == 0.05 and seed == 7

    def test_byte_identical_regeneration(self, tmp_path, small_intr):
        tex = make_texture(96, 96, seed=2)
        scene = generate_orbit(tex, 3, 1.0, 1.5, small_intr)
        m1 = write_scene(scene, tmp_path / "a", noise_level=0.1, seed=7)
        m2 = write_scene(scene, tmp_path / "b", noise_level=0.1, seed=7)
        import os

        a_dir, b_dir = os.path.dirname(m1), os.path.dirname(m2)
        for name in sorted(os.listdir(a_dir)):
            with open(os.path.join(a_dir, name), "rb") as fa, open(
                os.path.join(b_dir, name), "rb"
            ) as fb:
                assert fa.read() == fb.read(), name
