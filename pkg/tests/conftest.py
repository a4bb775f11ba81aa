"""Shared fixtures: small synthetic orbit scenes and frame factories."""

import numpy as np
import pytest

from curveba.camera import Intrinsics
from curveba.config import PipelineConfig
from curveba.frame import make_frame
from curveba.synth import generate_orbit, make_texture


@pytest.fixture(scope="session")
def small_intr():
    return Intrinsics(300.0, 300.0, 159.5, 119.5, 320, 240)


@pytest.fixture(scope="session")
def small_scene(small_intr):
    texture = make_texture(360, 360, seed=3)
    return generate_orbit(texture, 8, 1.0, 1.5, small_intr)


@pytest.fixture(scope="session")
def small_frames(small_scene, small_intr):
    cfg = PipelineConfig()
    return [
        make_frame(j, view, small_intr, pose.copy(), cfg)
        for j, (view, pose) in enumerate(zip(small_scene.views, small_scene.poses))
    ]
