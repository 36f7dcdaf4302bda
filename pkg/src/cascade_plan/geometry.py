"""
Planar geometry: poses, polylines with arc-length tables, oriented boxes,
separating-axis overlap tests and Fourier features.

Scalar helpers (``interp_along``, ``boxes_overlap`` ...) operate on the value
types. The ``*_batch`` / ``box_corners`` helpers operate on numpy arrays of
corners with shape ``(..., 4, 2)`` and are what the planner and augmentation
loops use on their hot paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

from .errors import DegenerateGeometry, InvalidArcLength

TWO_PI = 2.0 * math.pi
_DUP_TOL = 1e-12


def wrap_angle(a):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    if np.ndim(a) == 0:
        r = math.remainder(float(a), TWO_PI)
        return math.pi if r <= -math.pi else r
    r = np.remainder(np.asarray(a, dtype=float) + math.pi, TWO_PI) - math.pi
    return np.where(r <= -math.pi, r + TWO_PI, r)


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    heading: float = 0.0  # radians, normalized to (-pi, pi]

    def __post_init__(self):
        x, y, h = float(self.x), float(self.y), float(self.heading)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(h)):
            raise ValueError(f"non-finite pose ({x}, {y}, {h})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "heading", wrap_angle(h))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        """Express world points ``(N, 2)`` in this pose's frame."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        d = np.asarray(pts, dtype=float) - [self.x, self.y]
        return np.stack([d[..., 0] * c + d[..., 1] * s, -d[..., 0] * s + d[..., 1] * c], axis=-1)

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        """Map points ``(N, 2)`` given in this pose's frame to world coordinates."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        p = np.asarray(pts, dtype=float)
        return np.stack([self.x + p[..., 0] * c - p[..., 1] * s,
                         self.y + p[..., 0] * s + p[..., 1] * c], axis=-1)


class Polyline:
    """Immutable 2D polyline with a cached cumulative arc-length table.

    Consecutive duplicate vertices are dropped on construction, so every
    stored segment has positive length.
    """

    __slots__ = ("points", "cum_arc", "_seg_vec", "_seg_len", "_seg_heading")

    def __init__(self, points: Union[np.ndarray, Sequence[Sequence[float]]]):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("polyline contains non-finite coordinates")
        if len(pts) >= 2:
            step = np.hypot(*np.diff(pts, axis=0).T)
            keep = np.concatenate([[True], step > _DUP_TOL])
            pts = pts[keep]
        if len(pts) < 2:
            raise DegenerateGeometry("polyline needs at least two distinct points")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        for arr in (pts, seg, seg_len, cum):
            arr.setflags(write=False)
        self.points = pts
        self.cum_arc = cum
        self._seg_vec = seg
        self._seg_len = seg_len
        heading = np.arctan2(seg[:, 1], seg[:, 0])
        heading.setflags(write=False)
        self._seg_heading = heading

    @property
    def length(self) -> float:
        return float(self.cum_arc[-1])

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        return isinstance(other, Polyline) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())

    def __repr__(self) -> str:
        return f"Polyline(n={len(self.points)}, length={self.length:.3f})"

    def sample(self, s) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized interpolation: positions ``(..., 2)`` and headings at arc lengths ``s``.

        Arc lengths past the end are extrapolated along the final segment.
        """
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise InvalidArcLength(f"negative arc length {float(np.min(s))}")
        idx = np.searchsorted(self.cum_arc, s, side="right") - 1
        idx = np.clip(idx, 0, len(self._seg_len) - 1)
        frac = (s - self.cum_arc[idx]) / self._seg_len[idx]
        xy = self.points[idx] + frac[..., None] * self._seg_vec[idx]
        return xy, self._seg_heading[idx]

    def project(self, point) -> float:
        """Arc length of the closest point on the polyline to ``point``."""
        p = np.asarray(point, dtype=float)
        rel = p - self.points[:-1]
        t = np.einsum("ij,ij->i", rel, self._seg_vec) / (self._seg_len ** 2)
        t = np.clip(t, 0.0, 1.0)
        foot = self.points[:-1] + t[:, None] * self._seg_vec
        d2 = np.sum((foot - p) ** 2, axis=1)
        i = int(np.argmin(d2))
        return float(self.cum_arc[i] + t[i] * self._seg_len[i])

    def distance_to(self, point) -> float:
        s = self.project(point)
        xy, _ = self.sample(min(s, self.length))
        return float(np.hypot(*(np.asarray(point, dtype=float) - xy)))

    def transformed(self, pose: Pose2) -> "Polyline":
        """Place a polyline given in ``pose``'s local frame into the world."""
        return Polyline(pose.to_world(self.points))


def _as_xy(trajectory: Iterable) -> np.ndarray:
    rows = []
    for p in trajectory:
        if isinstance(p, Pose2):
            rows.append((p.x, p.y))
        else:
            rows.append((float(p[0]), float(p[1])))
    return np.asarray(rows, dtype=float).reshape(-1, 2)


def resample_path(trajectory, spacing: float) -> Polyline:
    """Resample a trajectory at fixed arc-length ``spacing``.

    The final vertex sits at the total length, so it may be closer than
    ``spacing`` to its predecessor.
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    xy = trajectory.points if isinstance(trajectory, Polyline) else _as_xy(trajectory)
    try:
        line = trajectory if isinstance(trajectory, Polyline) else Polyline(xy)
    except DegenerateGeometry as exc:
        raise DegenerateGeometry("cannot resample: all trajectory points coincide") from exc
    total = line.length
    grid = np.arange(0.0, total, spacing)
    grid = grid[grid < total - 1e-9]
    s = np.concatenate([grid, [total]])
    pts, _ = line.sample(s)
    pts[0] = line.points[0]
    pts[-1] = line.points[-1]
    return Polyline(pts)


def interp_along(path: Polyline, s: float) -> Pose2:
    """Pose at arc length ``s``; heading is the containing segment's direction."""
    if s < 0:
        raise InvalidArcLength(f"negative arc length {s}")
    xy, h = path.sample(s)
    return Pose2(float(xy[0]), float(xy[1]), float(h))


def straight_path(pose: Pose2, length: float, spacing: float = 2.0) -> Polyline:
    """Straight polyline from ``pose`` along its heading."""
    n = max(2, int(math.ceil(length / spacing)) + 1)
    local = np.stack([np.arange(n) * spacing, np.zeros(n)], axis=1)
    return Polyline(pose.to_world(local))


# --------------------------------------------------------------------------
# Oriented boxes


@dataclass(frozen=True)
class OrientedBox:
    center: Pose2
    length: float
    width: float

    def __post_init__(self):
        for name in ("length", "width"):
            v = float(getattr(self, name))
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"box {name} must be positive and finite, got {v}")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class CornerSet:
    corners: np.ndarray  # (4, 2): front-left, front-right, rear-right, rear-left

    @property
    def centroid(self) -> np.ndarray:
        return self.corners.mean(axis=0)


# local-frame corner signs in FL, FR, RR, RL order
_CORNER_SIGNS = np.array([[0.5, 0.5], [0.5, -0.5], [-0.5, -0.5], [-0.5, 0.5]])


def box_corners(x, y, heading, length, width) -> np.ndarray:
    """Corner array ``(..., 4, 2)`` for broadcastable box parameters."""
    x, y, heading, length, width = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (x, y, heading, length, width)))
    c, s = np.cos(heading)[..., None], np.sin(heading)[..., None]
    lx = _CORNER_SIGNS[:, 0] * length[..., None]
    ly = _CORNER_SIGNS[:, 1] * width[..., None]
    cx = x[..., None] + lx * c - ly * s
    cy = y[..., None] + lx * s + ly * c
    return np.stack([cx, cy], axis=-1)


def corners_of(box: OrientedBox) -> CornerSet:
    c = box.center
    return CornerSet(box_corners(c.x, c.y, c.heading, box.length, box.width))


def _axes(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    """The four unit edge normals of two rectangles, shape ``(..., 4, 2)``."""
    ea = np.stack([ca[..., 1, :] - ca[..., 0, :], ca[..., 2, :] - ca[..., 1, :]], axis=-2)
    eb = np.stack([cb[..., 1, :] - cb[..., 0, :], cb[..., 2, :] - cb[..., 1, :]], axis=-2)
    e = np.concatenate(np.broadcast_arrays(ea, eb), axis=-2)
    return e / np.linalg.norm(e, axis=-1, keepdims=True)


def _interval_overlap(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    """Per-axis overlap length of the projected intervals (negative = gap)."""
    ax = _axes(ca, cb)
    pa = np.einsum("...ck,...ak->...ac", ca, ax)
    pb = np.einsum("...ck,...ak->...ac", cb, ax)
    hi = np.minimum(pa.max(axis=-1), pb.max(axis=-1))
    lo = np.maximum(pa.min(axis=-1), pb.min(axis=-1))
    return hi - lo


def overlap_batch(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    """Closed-boundary separating-axis test on corner arrays."""
    return np.all(_interval_overlap(ca, cb) >= 0.0, axis=-1)


def _point_segment_min(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    a = poly
    b = np.roll(poly, -1, axis=-2)
    d = b - a                                   # (..., 4, 2)
    rel = pts[..., :, None, :] - a[..., None, :, :]   # (..., P, S, 2)
    dd = np.sum(d * d, axis=-1)[..., None, :]
    t = np.clip(np.sum(rel * d[..., None, :, :], axis=-1) / dd, 0.0, 1.0)
    foot = rel - t[..., None] * d[..., None, :, :]
    return np.sqrt(np.min(np.sum(foot * foot, axis=-1), axis=(-1, -2)))


def distance_batch(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    """Euclidean gap between rectangles given as corner arrays; 0 when overlapping."""
    ca, cb = np.broadcast_arrays(ca, cb)
    gap = np.minimum(_point_segment_min(ca, cb), _point_segment_min(cb, ca))
    return np.where(overlap_batch(ca, cb), 0.0, gap)


def signed_distance_batch(ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
    """Gap when separated, minus the minimum-axis penetration depth when overlapping."""
    ca, cb = np.broadcast_arrays(ca, cb)
    ov = _interval_overlap(ca, cb)
    inside = np.all(ov >= 0.0, axis=-1)
    gap = np.minimum(_point_segment_min(ca, cb), _point_segment_min(cb, ca))
    return np.where(inside, -ov.min(axis=-1), gap)


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    return bool(overlap_batch(corners_of(a).corners, corners_of(b).corners))


def min_box_distance(a: OrientedBox, b: OrientedBox) -> float:
    return float(distance_batch(corners_of(a).corners, corners_of(b).corners))


def fourier_encode(x: Sequence[float], n_freq: int) -> np.ndarray:
    """Sin/cos features at frequencies ``2**k * pi`` for k in ``range(n_freq)``.

    Layout is value-major: for each input value, the pairs
    ``[sin(2^k pi x), cos(2^k pi x)]`` for k = 0..n_freq-1.
    """
    if n_freq < 1:
        raise ValueError("n_freq must be >= 1")
    x = np.asarray(x, dtype=float).reshape(-1)
    ang = np.pi * x[:, None] * (2.0 ** np.arange(n_freq))[None, :]
    return np.stack([np.sin(ang), np.cos(ang)], axis=-1).reshape(-1)
