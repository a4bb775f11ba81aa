"""Pipeline configuration: plain-text key=value files with full defaults."""

from __future__ import annotations

from dataclasses import dataclass, fields


@dataclass
class PipelineConfig:
    # inputs / outputs
    manifest: str = ""  # synthetic scene manifest (views + intrinsics + gt poses)
    images_dir: str = ""  # alternative: directory of frames (sorted by name)
    intrinsics: str = ""  # "fx fy cx cy w h" when images_dir is used
    poses_init: str = ""  # initial trajectory; defaults to the manifest gt file
    gt_poses: str = ""  # optional ground truth for metrics
    depth_dir: str = ""  # optional 16-bit PGM depth maps (RGBD-style seeding)
    depth_scale: float = 5000.0

    # edge extraction
    canny_low: float = 40.0
    canny_high: float = 120.0
    canny_sigma: float = 1.4
    curvature_thresh: float = 0.35
    min_chain_len: int = 12
    nn_radius: float = 15.0

    # semi-dense depth recovery
    depth_min: float = 0.1
    depth_max: float = 20.0
    baseline_min: float = 0.01
    baseline_max: float = 10.0
    ref_score_floor: float = 0.005
    patch_reject: float = 62500.0  # best 5x5 SSD above this is rejected
    ambiguity_ratio: float = 0.9
    depth_window: int = 5

    # spline initialization
    target_len: int = 30

    # bundle adjustment
    samples_per_segment: int = 10  # residuals per segment use s+1 samples
    huber_delta: float = 2.0
    # geo residuals are in pixels, lengths in scene units; lambda1 must bridge
    # that gap or the anti-collapse penalty is powerless at desk scale
    lambda1: float = 1e5
    lambda2: float = 0.1
    lm_damping_init: float = 1e-4
    lm_damping_max: float = 1e10
    lm_max_iters: int = 50
    lm_tol_cost: float = 1e-8
    lm_tol_grad: float = 1e-8

    # correspondence management
    # the gate must admit re-observations whose error comes from single-view
    # depth initialization (a few px), or curves never gain the second
    # observation that lets BA refine them
    spatial_thresh: float = 5.0
    appearance_thresh: float = 0.15
    appearance_lambda: float = 1.0
    viewing_angle_max_deg: float = 60.0
    min_obs_promote: int = 3
    starvation_min_segments: int = 20
    hsv_dilate: int = 2
    extend_endpoint_px: float = 2.0
    extend_tangent_deg: float = 30.0

    # driver
    local_window: int = 5
    alternations: int = 2
    local_max_iters: int = 12

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        cfg = cls()
        types = {f.name: f.type for f in fields(cls)}
        with open(path) as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"bad config line: {raw!r}")
                key, val = (s.strip() for s in line.split("=", 1))
                if key not in types:
                    raise ValueError(f"unknown config key: {key}")
                kind = types[key]
                if kind in ("int", int):
                    setattr(cfg, key, int(val))
                elif kind in ("float", float):
                    setattr(cfg, key, float(val))
                else:
                    setattr(cfg, key, val)
        return cfg

    def write(self, path) -> None:
        lines = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, float):
                val = format(val, ".9g")
            lines.append(f"{f.name} = {val}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
