"""Distance-to-feature targets: Euclidean distance, the piecewise score profile, per-channel targets."""
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from .schemas import DEFAULT_CHANNEL_NAMES, ScoreParams


class Point(NamedTuple):
    x: int  # column
    y: int  # row


@dataclass
class LandmarkChannels:
    """Ordered (name, points) channels; channel count equals the network output width."""

    channels: List[Tuple[str, List[Point]]] = field(default_factory=list)

    def __post_init__(self):
        if not self.channels:
            raise ValueError("LandmarkChannels needs at least one channel")
        self.channels = [(name, [Point(int(p[0]), int(p[1])) for p in pts]) for name, pts in self.channels]

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.channels]

    def __len__(self) -> int:
        return len(self.channels)

    def points(self, channel: int) -> List[Point]:
        return self.channels[channel][1]

    def all_points(self) -> List[Tuple[int, Point]]:
        return [(c, p) for c, (_, pts) in enumerate(self.channels) for p in pts]

    def shifted(self, dx: int, dy: int) -> "LandmarkChannels":
        return LandmarkChannels([(n, [Point(p.x + dx, p.y + dy) for p in pts]) for n, pts in self.channels])

    @classmethod
    def from_points(cls, groups: Sequence[Sequence[Tuple[int, int]]], names: Sequence[str] = DEFAULT_CHANNEL_NAMES):
        return cls([(names[i], list(g)) for i, g in enumerate(groups)])


def euclid_dist(p1: Point, p2: Point) -> float:
    return math.hypot(p1[0] - p2[0], p1[1] - p2[1])


def score_fn(d: float, params: ScoreParams = ScoreParams()) -> float:
    """
    Piecewise-linear score: 1 -> s_knee over [0, d_inner], s_knee -> 0 over
    (d_inner, d_outer], 0 beyond. Defaults give 1 - 3d/80, 1/2 - d/80, 0.
    """
    if d < 0:
        raise ValueError(f"distance must be non-negative, got {d}")
    if d <= params.d_inner:
        return 1.0 - (1.0 - params.s_knee) * d / params.d_inner
    if d <= params.d_outer:
        return params.s_knee * (params.d_outer - d) / (params.d_outer - params.d_inner)
    return 0.0


def score_array(d: np.ndarray, params: ScoreParams = ScoreParams()) -> np.ndarray:
    """Vectorized score_fn over an array of distances."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    inner = 1.0 - (1.0 - params.s_knee) * d / params.d_inner
    outer = params.s_knee * (params.d_outer - d) / (params.d_outer - params.d_inner)
    return np.where(d <= params.d_inner, inner, np.where(d <= params.d_outer, outer, 0.0))


def score_to_distance(s: float, params: ScoreParams = ScoreParams()) -> float:
    """Distance implied by a score; scores at or below 0 map to d_outer, at or above 1 to 0."""
    if s >= 1.0:
        return 0.0
    if s <= 0.0:
        return params.d_outer
    if s >= params.s_knee:
        return (1.0 - s) * params.d_inner / (1.0 - params.s_knee)
    return params.d_outer - s * (params.d_outer - params.d_inner) / params.s_knee


def target_vector(p: Point, landmarks: LandmarkChannels, params: ScoreParams = ScoreParams()) -> np.ndarray:
    out = np.zeros(len(landmarks), dtype=np.float64)
    for c, (name, pts) in enumerate(landmarks.channels):
        if not pts:
            raise ValueError(f"landmark channel '{name}' is empty")
        out[c] = score_fn(min(euclid_dist(p, q) for q in pts), params)
    return out


def target_matrix(
    points: np.ndarray, landmarks: LandmarkChannels, params: ScoreParams = ScoreParams(), dtype=np.float32
) -> np.ndarray:
    """Batch target_vector: points [B,2] (x, y) -> targets [B,C]."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    out = np.zeros((pts.shape[0], len(landmarks)), dtype=dtype)
    for c, (name, chan) in enumerate(landmarks.channels):
        if not chan:
            raise ValueError(f"landmark channel '{name}' is empty")
        q = np.asarray(chan, dtype=np.float64)
        d = np.hypot(pts[:, None, 0] - q[None, :, 0], pts[:, None, 1] - q[None, :, 1]).min(axis=1)
        out[:, c] = score_array(d, params)
    return out
