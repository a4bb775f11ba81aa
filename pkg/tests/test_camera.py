"""Camera model, pose retraction, alignment, and trajectory file format."""

import numpy as np
import pytest

from curveba.camera import (
    Intrinsics,
    Pose,
    backproject,
    pose_retract,
    project,
    read_pose_file,
    sim3_align,
    write_pose_file,
)
from curveba.rotations import rotation_exp


@pytest.fixture
def intr():
    return Intrinsics(500.0, 480.0, 320.0, 240.0, 640, 480)


def random_pose(rng):
    return Pose(rotation_exp(rng.uniform(-1, 1, size=3)), rng.uniform(-2, 2, size=3))


def rodrigues_oracle(axis_angle):
    """Independent Rodrigues formula for the retraction test."""
    w = np.asarray(axis_angle, dtype=float)
    theta = np.linalg.norm(w)
    if theta == 0:
        return np.eye(3)
    k = w / theta
    km = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * km + (1 - np.cos(theta)) * (km @ km)


class TestProjection:
    def test_principal_ray(self, intr):
        pt = backproject(np.array([intr.cx, intr.cy]), np.array(1.0), intr, Pose.identity())
        np.testing.assert_allclose(pt, [0, 0, 1], atol=1e-15)

    def test_hand_computed_backprojection(self, intr):
        pt = backproject(
            np.array([intr.cx + intr.fx, intr.cy]), np.array(2.0), intr, Pose.identity()
        )
        np.testing.assert_allclose(pt, [2, 0, 2], atol=1e-12)

    def test_project_principal_point(self, intr):
        px, z = project(np.array([0.0, 0, 1]), intr, Pose.identity())
        np.testing.assert_allclose(px, [intr.cx, intr.cy])
        assert z == 1.0

    def test_round_trip_random(self, intr):
        rng = np.random.default_rng(0)
        pose = random_pose(rng)
        px = np.column_stack(
            [rng.uniform(0, intr.width - 1, 100), rng.uniform(0, intr.height - 1, 100)]
        )
        d = rng.uniform(0.5, 10.0, 100)
        back, z = project(backproject(px, d, intr, pose), intr, pose)
        assert np.abs(back - px).max() < 1e-9
        np.testing.assert_allclose(z, d, atol=1e-9)

    def test_negative_depth_flag(self, intr):
        _, z = project(np.array([0.0, 0.0, -1.0]), intr, Pose.identity())
        assert z < 0

    def test_backproject_rejects_nonpositive_depth(self, intr):
        with pytest.raises(ValueError):
            backproject(np.array([10.0, 10.0]), np.array(0.0), intr, Pose.identity())


class TestRetract:
    def test_zero_increment(self):
        rng = np.random.default_rng(1)
        pose = random_pose(rng)
        out = pose_retract(pose, np.zeros(6))
        np.testing.assert_allclose(out.r_w, pose.r_w, atol=1e-15)
        np.testing.assert_allclose(out.t_w, pose.t_w, atol=1e-15)

    def test_pure_translation(self):
        out = pose_retract(Pose.identity(), np.array([0, 0, 0, 1.0, 2.0, 3.0]))
        np.testing.assert_allclose(out.r_w, np.eye(3))
        np.testing.assert_allclose(out.t_w, [1, 2, 3])

    def test_rotation_against_rodrigues_oracle(self):
        w = np.array([0.0, 0.0, np.pi / 2])
        out = pose_retract(Pose.identity(), np.concatenate([w, np.zeros(3)]))
        np.testing.assert_allclose(out.r_w, rodrigues_oracle(w), atol=1e-12)
        rng = np.random.default_rng(2)
        for _ in range(20):
            w = rng.uniform(-2, 2, size=3)
            out = pose_retract(Pose.identity(), np.concatenate([w, np.zeros(3)]))
            np.testing.assert_allclose(out.r_w, rodrigues_oracle(w), atol=1e-12)


class TestSim3:
    def test_identity(self):
        rng = np.random.default_rng(3)
        traj = rng.uniform(-1, 1, size=(10, 3))
        sim = sim3_align(traj, traj)
        assert abs(sim.scale - 1.0) < 1e-12
        np.testing.assert_allclose(sim.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(sim.translation, 0, atol=1e-9)

    def test_recovers_inverse_transform(self):
        rng = np.random.default_rng(4)
        gt = rng.uniform(-1, 1, size=(12, 3))
        s = 1.7
        r = rotation_exp(np.array([0.2, -0.4, 0.9]))
        t = np.array([0.3, -1.0, 2.0])
        est = s * gt @ r.T + t
        sim = sim3_align(est, gt)
        np.testing.assert_allclose(sim.apply(est), gt, atol=1e-9)

    def test_pure_scale(self):
        rng = np.random.default_rng(5)
        gt = rng.uniform(-1, 1, size=(8, 3))
        sim = sim3_align(2.0 * gt, gt)
        assert abs(sim.scale - 0.5) < 1e-12
        np.testing.assert_allclose(sim.rotation, np.eye(3), atol=1e-9)

    def test_residual_invariant_to_common_rigid_motion(self):
        rng = np.random.default_rng(6)
        est = rng.uniform(-1, 1, size=(9, 3))
        gt = est + rng.normal(0, 0.01, size=(9, 3))
        base = np.linalg.norm(sim3_align(est, gt).apply(est) - gt)
        r = rotation_exp(np.array([0.5, 0.2, -0.1]))
        t = np.array([5.0, -2.0, 1.0])
        moved = np.linalg.norm(
            sim3_align(est @ r.T + t, gt @ r.T + t).apply(est @ r.T + t) - (gt @ r.T + t)
        )
        assert abs(base - moved) < 1e-9

    def test_rejects_degenerate(self):
        line = np.outer(np.arange(5, dtype=float), [1.0, 0, 0])
        with pytest.raises(ValueError):
            sim3_align(line, line)
        with pytest.raises(ValueError):
            sim3_align(np.zeros((2, 3)), np.zeros((2, 3)))


class TestPoseFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        poses = [random_pose(rng) for _ in range(5)]
        path = tmp_path / "traj.txt"
        write_pose_file(path, poses, timestamps=[0.1 * i for i in range(5)])
        ts, loaded = read_pose_file(path)
        np.testing.assert_allclose(ts, [0.1 * i for i in range(5)], atol=1e-9)
        for a, b in zip(poses, loaded):
            np.testing.assert_allclose(a.r_w, b.r_w, atol=1e-7)
            np.testing.assert_allclose(a.t_w, b.t_w, atol=1e-7)

    def test_format_is_eight_columns(self, tmp_path):
        path = tmp_path / "traj.txt"
        write_pose_file(path, [Pose.identity()])
        cols = path.read_text().split("\n")[0].split()
        assert len(cols) == 8
        # identity rotation -> quaternion (0, 0, 0, 1), w last
        np.testing.assert_allclose([float(c) for c in cols[4:]], [0, 0, 0, 1], atol=1e-12)
