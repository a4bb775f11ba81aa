"""Cubic Bezier segments and smooth composite curves (polybeziers).

A polybezier chains cubic segments whose control points are derived from
shared latent variables: link points Q, link directions (encoded as an angle
pair about a frozen pre-rotation), and per-segment handle lengths. Deriving
the control points from the shared latents makes C1 continuity structural
rather than penalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rotations import rotation_aligning_z

# Handle lengths are clamped here instead of being optimized in log space;
# keeps the latent vector linear.
HANDLE_FLOOR = 1e-6


@dataclass(frozen=True)
class BezierSegment:
    """A single cubic segment defined by four 3D control points."""

    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray

    def control_matrix(self) -> np.ndarray:
        """Control points stacked as a (4, 3) array."""
        return np.stack([self.p0, self.p1, self.p2, self.p3])


def bernstein_weights(t) -> np.ndarray:
    """Cubic Bernstein basis evaluated at t; shape (..., 4), rows sum to 1."""
    t = np.asarray(t, dtype=float)
    u = 1.0 - t
    return np.stack([u**3, 3.0 * u**2 * t, 3.0 * u * t**2, t**3], axis=-1)


def evaluate_bezier(seg: BezierSegment, t) -> np.ndarray:
    """Evaluate the segment at curve parameter t in [0, 1].

    Accepts a scalar (returns shape (3,)) or an array of parameters
    (returns shape (n, 3)). Values outside [0, 1] are rejected.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("curve parameter t must lie in [0, 1]")
    return bernstein_weights(t) @ seg.control_matrix()


def sample_segment(seg: BezierSegment, s: int) -> np.ndarray:
    """Evaluate at s uniform parameters t_k = k/(s-1); shape (s, 3)."""
    if s < 2:
        raise ValueError("need at least 2 samples")
    return evaluate_bezier(seg, np.linspace(0.0, 1.0, s))


def direction_from_angles(r0: np.ndarray, theta) -> np.ndarray:
    """Unit direction from an angle pair, rotated by the pre-rotation r0.

    Convention: v(theta) = (sin t1 cos t2, sin t1 sin t2, cos t1), so
    theta == (0, 0) returns the third column of r0.
    """
    t1, t2 = theta
    v = np.array([np.sin(t1) * np.cos(t2), np.sin(t1) * np.sin(t2), np.cos(t1)])
    return np.asarray(r0, dtype=float) @ v


def direction_jacobian(r0: np.ndarray, theta) -> np.ndarray:
    """d(direction)/d(theta): shape (3, 2)."""
    t1, t2 = theta
    dv = np.array(
        [
            [np.cos(t1) * np.cos(t2), -np.sin(t1) * np.sin(t2)],
            [np.cos(t1) * np.sin(t2), np.sin(t1) * np.cos(t2)],
            [-np.sin(t1), 0.0],
        ]
    )
    return np.asarray(r0, dtype=float) @ dv


@dataclass
class PolybezierParams:
    """Latent parameters of a composite curve with n segments.

    link_points: (n+1, 3) shared segment endpoints Q.
    link_angles: (n+1, 2) angle pairs; directions are derived per link.
    pre_rotations: (n+1, 3, 3) frozen rotations fixing the chart so that a
        zero angle pair reproduces the initial link direction.
    handle_lengths: (n, 2) nonnegative (d1, d2) per segment.
    """

    link_points: np.ndarray
    link_angles: np.ndarray
    pre_rotations: np.ndarray
    handle_lengths: np.ndarray

    def __post_init__(self):
        self.link_points = np.asarray(self.link_points, dtype=float)
        self.link_angles = np.asarray(self.link_angles, dtype=float)
        self.pre_rotations = np.asarray(self.pre_rotations, dtype=float)
        self.handle_lengths = np.asarray(self.handle_lengths, dtype=float)
        n = self.segment_count
        if n < 1:
            raise ValueError("polybezier needs at least one segment")
        if self.link_points.shape != (n + 1, 3):
            raise ValueError("link_points shape mismatch")
        if self.link_angles.shape != (n + 1, 2):
            raise ValueError("link_angles shape mismatch")
        if self.pre_rotations.shape != (n + 1, 3, 3):
            raise ValueError("pre_rotations shape mismatch")
        if np.any(self.handle_lengths < 0.0):
            raise ValueError("handle lengths must be nonnegative")

    @property
    def segment_count(self) -> int:
        return self.handle_lengths.shape[0]

    def link_direction(self, i: int) -> np.ndarray:
        return direction_from_angles(self.pre_rotations[i], self.link_angles[i])

    def link_directions(self) -> np.ndarray:
        return np.stack([self.link_direction(i) for i in range(self.segment_count + 1)])

    def clamp_handles(self) -> None:
        np.maximum(self.handle_lengths, HANDLE_FLOOR, out=self.handle_lengths)

    def copy(self) -> "PolybezierParams":
        return PolybezierParams(
            self.link_points.copy(),
            self.link_angles.copy(),
            self.pre_rotations.copy(),
            self.handle_lengths.copy(),
        )


def control_points_from_params(params: PolybezierParams, i: int) -> BezierSegment:
    """Derive segment i's control points.

    p0 = Q_i, p1 = Q_i + d1 v_i, p2 = Q_{i+1} - d2 v_{i+1}, p3 = Q_{i+1}.
    """
    if not 0 <= i < params.segment_count:
        raise IndexError(f"segment index {i} out of range")
    q0 = params.link_points[i]
    q1 = params.link_points[i + 1]
    v0 = params.link_direction(i)
    v1 = params.link_direction(i + 1)
    d1, d2 = params.handle_lengths[i]
    return BezierSegment(q0, q0 + d1 * v0, q1 - d2 * v1, q1)


def segments_from_params(params: PolybezierParams) -> list[BezierSegment]:
    return [control_points_from_params(params, i) for i in range(params.segment_count)]


@dataclass
class PolybezierCurve:
    """A polybezier plus the bookkeeping the mapping pipeline needs."""

    curve_id: int
    params: PolybezierParams
    init_lengths: np.ndarray  # |Q_i - Q_{i+1}| captured at initialization
    origin_frame: int = -1
    mean_hsv: np.ndarray = field(default_factory=lambda: np.zeros(3))
    view_dir: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    @property
    def segment_count(self) -> int:
        return self.params.segment_count

    def segment(self, i: int) -> BezierSegment:
        return control_points_from_params(self.params, i)


def chord_lengths(params: PolybezierParams) -> np.ndarray:
    q = params.link_points
    return np.linalg.norm(np.diff(q, axis=0), axis=1)


# ---------------------------------------------------------------------------
# Serialization: one curve per block, floats with 9 significant digits
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def write_curves(path, curves) -> None:
    """Write curves as text blocks.

    ``curves`` is an iterable of (curve_id, PolybezierParams). Per block:
    a ``curve <id> <n>`` header, one ``Q x y z`` line per link point, one
    (derived) ``V x y z`` line per link direction, one ``D d1 d2`` line per
    segment.
    """
    lines = []
    for curve_id, params in curves:
        n = params.segment_count
        lines.append(f"curve {curve_id} {n}")
        for q in params.link_points:
            lines.append("Q " + " ".join(_fmt(v) for v in q))
        for i in range(n + 1):
            lines.append("V " + " ".join(_fmt(v) for v in params.link_direction(i)))
        for d1, d2 in params.handle_lengths:
            lines.append(f"D {_fmt(d1)} {_fmt(d2)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_curves(path) -> dict[int, PolybezierParams]:
    """Read back curves written by write_curves.

    The V lines seed the pre-rotations (angles reset to zero), so a
    write/read round trip preserves the derived control points.
    """
    with open(path) as fh:
        tokens = [ln.split() for ln in fh if ln.strip()]
    curves: dict[int, PolybezierParams] = {}
    pos = 0
    while pos < len(tokens):
        head = tokens[pos]
        if head[0] != "curve":
            raise ValueError(f"expected curve header, got {' '.join(head)}")
        curve_id, n = int(head[1]), int(head[2])
        pos += 1
        q = np.array([[float(v) for v in tokens[pos + k][1:4]] for k in range(n + 1)])
        pos += n + 1
        vs = np.array([[float(v) for v in tokens[pos + k][1:4]] for k in range(n + 1)])
        pos += n + 1
        d = np.array([[float(v) for v in tokens[pos + k][1:3]] for k in range(n)])
        pos += n
        r0 = np.stack([rotation_aligning_z(v) for v in vs])
        curves[curve_id] = PolybezierParams(q, np.zeros((n + 1, 2)), r0, d)
    return curves
