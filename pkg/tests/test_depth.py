"""Semi-dense depth: reference selection, epipolar search, robust averaging."""

import numpy as np
import pytest

from curveba.camera import Intrinsics, Pose
from curveba.config import PipelineConfig
from curveba.depth import (
    DepthHypothesis,
    chain_depths,
    epipolar_depth,
    epipolar_direction,
    robust_window_average,
    select_reference,
)
from curveba.edges import EdgeImage, NNField
from curveba.frame import CameraFrame, make_frame
from curveba.synth import plane_depth


def minimal_frame(frame_id, pose, intr, gray=None, grad=None):
    h, w = intr.height, intr.width
    gray = gray if gray is not None else np.zeros((h, w))
    mask = np.zeros((h, w), dtype=bool)
    grad_dir = np.zeros((h, w, 2))
    if grad is not None:
        for (x, y), g in grad.items():
            mask[y, x] = True
            grad_dir[y, x] = g
    edges = EdgeImage(mask=mask, grad_dir=grad_dir, hsv=np.zeros((h, w, 3)))
    nn = NNField(
        nearest_x=np.full((h, w), -1, dtype=np.int32),
        nearest_y=np.full((h, w), -1, dtype=np.int32),
        dist=np.full((h, w), np.inf),
        radius=15.0,
    )
    return CameraFrame(frame_id, intr, pose, gray, edges, nn, [])


class TestSelectReference:
    def setup_method(self):
        self.intr = Intrinsics(300.0, 300.0, 159.5, 119.5, 320, 240)
        self.p = (159.5, 119.5)

    def test_sideways_baseline_vertical_edge(self):
        # vertical edge -> horizontal gradient; sideways baseline is ideal
        target = minimal_frame(
            0, Pose.identity(), self.intr, grad={(160, 120): np.array([1.0, 0.0])}
        )
        side = minimal_frame(1, Pose(np.eye(3), np.array([0.5, 0.0, 0.0])), self.intr)
        assert select_reference(target, [side], (160.0, 120.0)) == 1

    def test_zero_baseline_rejected(self):
        target = minimal_frame(
            0, Pose.identity(), self.intr, grad={(160, 120): np.array([1.0, 0.0])}
        )
        same = minimal_frame(3, Pose.identity(), self.intr)
        assert select_reference(target, [same], (160.0, 120.0)) is None

    def test_epipolar_parallel_to_edge_loses(self):
        # horizontal edge: gradient vertical; horizontal epipolar direction is
        # useless, vertical baseline wins
        target = minimal_frame(
            0, Pose.identity(), self.intr, grad={(160, 120): np.array([0.0, 1.0])}
        )
        horiz = minimal_frame(1, Pose(np.eye(3), np.array([0.5, 0.0, 0.0])), self.intr)
        vert = minimal_frame(2, Pose(np.eye(3), np.array([0.0, 0.5, 0.0])), self.intr)
        assert select_reference(target, [horiz, vert], (160.0, 120.0)) == 2

    def test_epipolar_direction_sideways(self):
        target = minimal_frame(0, Pose.identity(), self.intr)
        ref = minimal_frame(1, Pose(np.eye(3), np.array([0.5, 0.0, 0.0])), self.intr)
        d = epipolar_direction(np.array([100.0, 100.0]), target, ref)
        np.testing.assert_allclose(np.abs(d), [1.0, 0.0], atol=1e-12)


class TestEpipolarDepth:
    def test_synthetic_plane_accuracy(self, small_scene, small_frames, small_intr):
        cfg = PipelineConfig()
        target, ref = small_frames[0], small_frames[1]
        checked = 0
        good = 0
        for chain in target.chains[:6]:
            for px in chain.pixels[::4].astype(float):
                rid = select_reference(target, [ref], px, cfg)
                if rid is None:
                    continue
                hyp = epipolar_depth(target, ref, px, (cfg.depth_min, cfg.depth_max), cfg)
                if hyp is None:
                    continue
                gt = float(plane_depth(target.pose, small_intr, px))
                checked += 1
                if abs(hyp.depth - gt) / gt < 0.02:
                    good += 1
        assert checked >= 50
        assert good / checked >= 0.9

    def test_textureless_ambiguity_rejected(self, small_intr):
        gray = np.full((240, 320), 120.0)
        target = minimal_frame(0, Pose.identity(), small_intr, gray=gray)
        ref = minimal_frame(
            1, Pose(np.eye(3), np.array([0.3, 0.0, 0.0])), small_intr, gray=gray
        )
        out = epipolar_depth(target, ref, np.array([160.0, 120.0]), (0.5, 5.0))
        assert out is None

    def test_epipolar_segment_outside_image(self, small_intr):
        target = minimal_frame(0, Pose.identity(), small_intr)
        # reference looking away: everything projects behind it
        ref = minimal_frame(
            1, Pose(np.diag([1.0, -1.0, -1.0]), np.array([0.0, 0.0, -1.0])), small_intr
        )
        out = epipolar_depth(target, ref, np.array([160.0, 120.0]), (0.5, 5.0))
        assert out is None

    def test_positive_depth_only(self, small_frames):
        cfg = PipelineConfig()
        target, ref = small_frames[2], small_frames[3]
        chain = target.chains[0]
        for px in chain.pixels[::6].astype(float):
            hyp = epipolar_depth(target, ref, px, (cfg.depth_min, cfg.depth_max), cfg)
            if hyp is not None:
                assert hyp.depth > 0


class TestRobustWindowAverage:
    def test_constant_unchanged(self):
        d = np.full(9, 2.5)
        np.testing.assert_allclose(robust_window_average(d), d)

    def test_outlier_invalidated_others_kept(self):
        d = np.array([1.0, 1.0, 10.0, 1.0, 1.0])
        out = robust_window_average(d)
        assert np.isnan(out[2])
        np.testing.assert_allclose(out[[0, 1, 3, 4]], 1.0)

    def test_linear_ramp_within_half_range(self):
        d = 1.0 + 0.02 * np.arange(20)
        out = robust_window_average(d)
        assert np.isfinite(out).all()
        assert np.abs(out - d).max() <= 0.04 + 1e-12  # window half-range

    def test_invalid_stay_invalid(self):
        d = np.array([np.nan, 1.0, 1.0, 1.0, np.nan])
        out = robust_window_average(d)
        assert np.isnan(out[0]) and np.isnan(out[4])
        np.testing.assert_allclose(out[1:4], 1.0)


class TestChainDepths:
    def test_depth_map_seeding(self, small_intr):
        target = minimal_frame(0, Pose.identity(), small_intr)
        target.depth_map = np.full((240, 320), 2.0)
        pixels = np.column_stack([np.arange(10) + 50, np.full(10, 60)])
        out = chain_depths(target, [], pixels)
        np.testing.assert_allclose(out, 2.0)

    def test_determinism(self, small_frames):
        cfg = PipelineConfig()
        target, ref = small_frames[0], small_frames[1]
        pixels = target.chains[0].pixels
        a = chain_depths(target, [ref], pixels, cfg)
        b = chain_depths(target, [ref], pixels, cfg)
        np.testing.assert_array_equal(a, b)
