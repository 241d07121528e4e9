"""Bird's-eye-view projection of aggregated point-cloud frames.

The ego vehicle sits at the center of the grid with an upward (+row toward
+x) heading: forward decreases the row index, left decreases the column
index. Per cell the maximum point elevation is kept, which preserves
vertical obstacles, then clamped to a fixed window and quantized to
[0, 255].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grids import DEFAULT_HEIGHT_WINDOW, HeightMap


@dataclass(frozen=True)
class Pose2p5D:
    """Planar pose plus elevation: x east/forward, y north/left, yaw CCW."""

    x: float
    y: float
    z: float
    yaw: float

    def __post_init__(self) -> None:
        yaw = (self.yaw + math.pi) % (2.0 * math.pi) - math.pi
        if yaw == -math.pi:
            yaw = math.pi
        object.__setattr__(self, "yaw", yaw)


@dataclass(frozen=True)
class PointCloud:
    """Points of one scan in that scan's sensor frame."""

    points: np.ndarray
    pose: Pose2p5D

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)


def world_to_pixel(
    p: tuple[float, float], rows: int, cols: int, resolution: float
) -> tuple[int, int] | None:
    """Map reference-frame meters to a (row, col) index, or None if off-grid."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    j = math.floor(rows / 2.0 - p[0] / resolution)
    k = math.floor(cols / 2.0 - p[1] / resolution)
    if 0 <= j < rows and 0 <= k < cols:
        return j, k
    return None


def pixel_centers(rows: int, cols: int, resolution: float) -> tuple[np.ndarray, np.ndarray]:
    """Reference-frame coordinates of every pixel center: x over rows, y over cols."""
    xs = resolution * (rows / 2.0 - np.arange(rows) - 0.5)
    ys = resolution * (cols / 2.0 - np.arange(cols) - 0.5)
    return xs, ys


def quantize_height(h, window: tuple[float, float] = DEFAULT_HEIGHT_WINDOW):
    """Clamp to the window and linearly project onto [0, 255], rounding half up."""
    lo, hi = window
    if not lo < hi:
        raise ValueError("degenerate height window")
    h = np.clip(np.asarray(h, dtype=np.float64), lo, hi)
    q = np.floor(255.0 * (h - lo) / (hi - lo) + 0.5).astype(np.int64)
    return int(q) if q.ndim == 0 else q


def dequantize_height(q, window: tuple[float, float] = DEFAULT_HEIGHT_WINDOW):
    """Center estimate of the elevation encoded by a quantized value."""
    lo, hi = window
    if not lo < hi:
        raise ValueError("degenerate height window")
    h = lo + np.asarray(q, dtype=np.float64) * (hi - lo) / 255.0
    return float(h) if h.ndim == 0 else h


def transform_to_reference(cloud: PointCloud, reference: Pose2p5D) -> np.ndarray:
    """Rigidly move one scan's points into the reference pose's frame."""
    pts = cloud.points
    if pts.shape[0] == 0:
        return pts.reshape(0, 3)
    dyaw = cloud.pose.yaw - reference.yaw
    c, s = math.cos(dyaw), math.sin(dyaw)
    x = c * pts[:, 0] - s * pts[:, 1]
    y = s * pts[:, 0] + c * pts[:, 1]
    cr, sr = math.cos(-reference.yaw), math.sin(-reference.yaw)
    tx = cloud.pose.x - reference.x
    ty = cloud.pose.y - reference.y
    x = x + cr * tx - sr * ty
    y = y + sr * tx + cr * ty
    z = pts[:, 2] + cloud.pose.z - reference.z
    return np.column_stack([x, y, z])


def aggregate_frames(
    frames,
    reference: Pose2p5D,
    rows: int,
    cols: int,
    resolution: float,
    height_window: tuple[float, float] = DEFAULT_HEIGHT_WINDOW,
) -> HeightMap:
    """Fuse consecutive scans into one ego-centered height map.

    Every point is transformed into the reference frame; each cell records
    the maximum elevation of the points that fall in it (the reduction is
    commutative, so frame order does not matter) and becomes valid.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("at least one frame required")
    lo, hi = height_window
    if not lo < hi:
        raise ValueError("degenerate height window")
    best = np.full((rows, cols), -np.inf)
    for cloud in frames:
        pts = transform_to_reference(cloud, reference)
        if pts.shape[0] == 0:
            continue
        j = np.floor(rows / 2.0 - pts[:, 0] / resolution).astype(np.int64)
        k = np.floor(cols / 2.0 - pts[:, 1] / resolution).astype(np.int64)
        keep = (j >= 0) & (j < rows) & (k >= 0) & (k < cols)
        np.maximum.at(best, (j[keep], k[keep]), pts[keep, 2])
    valid = best > -np.inf
    codes = np.zeros((rows, cols), dtype=np.int64)
    codes[valid] = quantize_height(best[valid], height_window)
    return HeightMap(codes, valid, resolution, height_window)
