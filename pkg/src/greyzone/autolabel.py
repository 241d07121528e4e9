"""Automatic weak labels: region-grown vertical obstacles and the vehicle path.

The region grower floods outward from road-height seed cells in
breadth-first order; a neighbor joins the drivable set when both the height
step and the slope angle to it stay under their thresholds, otherwise it is
classified as obstacle. A loose threshold pair already yields a
conservative (high-precision) vertical obstacle set. The driver's path,
rasterized at vehicle width, supplies the drivable weak labels.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .bev import dequantize_height, pixel_centers
from .grids import HeightMap, Label, LabelMap, Role

# Fixed scan orders; classification of contested pixels is first-wins, so
# these orders are part of the operation's contract.
NEIGHBORS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
NEIGHBORS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))


class NoSeedsError(RuntimeError):
    """No valid pixel falls inside the seed height interval."""


@dataclass(frozen=True)
class RegionGrowParams:
    t_h: float = 0.3  # meters
    t_a: float = 0.6  # radians
    seed_interval: tuple[float, float] = (-0.3, 0.3)  # meters, relative to ego ground
    connectivity: int = 8

    def __post_init__(self) -> None:
        if self.t_h <= 0:
            raise ValueError("height threshold must be positive")
        if not 0 < self.t_a < math.pi / 2:
            raise ValueError("angle threshold must lie in (0, pi/2)")
        if not self.seed_interval[0] < self.seed_interval[1]:
            raise ValueError("degenerate seed interval")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")


@dataclass(frozen=True)
class RegionGrowResult:
    drivable: frozenset
    obstacle: frozenset

    def __post_init__(self) -> None:
        if self.drivable & self.obstacle:
            raise ValueError("drivable and obstacle sets overlap")


def region_grow(hmap: HeightMap, params: RegionGrowParams) -> RegionGrowResult:
    """Breadth-first flood from seed cells, splitting reachable terrain into
    drivable and obstacle sets.

    Heights are dequantized back to meters before thresholding. Seeds are all
    valid cells inside the seed interval (scanned row-major); expansion pops
    FIFO and classifies each unvisited valid neighbor exactly once: drivable
    when the height step < t_h and the slope angle atan(step / center
    distance) < t_a, obstacle otherwise. Obstacle cells are not expanded.
    Invalid cells are never visited; cells reached by neither set stay out.
    """
    valid = hmap.valid
    if not valid.any():
        raise ValueError("height map has no valid pixel")
    rows, cols = valid.shape
    h = dequantize_height(hmap.height, hmap.window).tolist()
    vl = valid.tolist()
    lo, hi = params.seed_interval
    offsets = NEIGHBORS_8 if params.connectivity == 8 else NEIGHBORS_4
    steps = [(dj, dk, hmap.resolution * math.hypot(dj, dk)) for dj, dk in offsets]

    state = [[0] * cols for _ in range(rows)]  # 0 unvisited, 1 drivable, 2 obstacle
    queue = deque()
    for j in range(rows):
        for k in range(cols):
            if vl[j][k] and lo <= h[j][k] <= hi:
                state[j][k] = 1
                queue.append((j, k))
    if not queue:
        raise NoSeedsError("no valid pixel inside the seed height interval")

    max_tan = math.tan(params.t_a)  # angle test as an equivalent step bound
    while queue:
        j, k = queue.popleft()
        hj = h[j][k]
        for dj, dk, dist in steps:
            nj, nk = j + dj, k + dk
            if not (0 <= nj < rows and 0 <= nk < cols):
                continue
            if not vl[nj][nk] or state[nj][nk]:
                continue
            dh = abs(hj - h[nj][nk])
            if dh < params.t_h and dh < dist * max_tan:
                state[nj][nk] = 1
                queue.append((nj, nk))
            else:
                state[nj][nk] = 2

    drivable = frozenset((j, k) for j in range(rows) for k in range(cols) if state[j][k] == 1)
    obstacle = frozenset((j, k) for j in range(rows) for k in range(cols) if state[j][k] == 2)
    return RegionGrowResult(drivable, obstacle)


def polyline_distance_field(vertices, rows: int, cols: int, resolution: float) -> np.ndarray:
    """Distance from every pixel center to a piecewise-linear path (meters)."""
    verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    if verts.shape[0] == 0:
        raise ValueError("empty polyline")
    xs, ys = pixel_centers(rows, cols, resolution)
    px = np.broadcast_to(xs[:, None], (rows, cols))
    py = np.broadcast_to(ys[None, :], (rows, cols))
    best = np.hypot(px - verts[0, 0], py - verts[0, 1])
    for a, b in zip(verts[:-1], verts[1:]):
        d = b - a
        seg2 = float(d @ d)
        if seg2 == 0.0:
            dist = np.hypot(px - b[0], py - b[1])
        else:
            t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / seg2, 0.0, 1.0)
            dist = np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))
        np.minimum(best, dist, out=best)
    return best


def project_vehicle_path(trajectory, vehicle_width: float, rows: int, cols: int, resolution: float) -> np.ndarray:
    """Rasterize the driven trajectory as a swath of vehicle width."""
    if vehicle_width <= 0:
        raise ValueError("vehicle width must be positive")
    poses = list(trajectory)
    if not poses:
        raise ValueError("empty trajectory")
    verts = [(p.x, p.y) for p in poses]
    return polyline_distance_field(verts, rows, cols, resolution) <= vehicle_width / 2.0


def make_weak_labels(
    hmap: HeightMap,
    rg: RegionGrowResult,
    vp: np.ndarray,
    use_rg_drivable: bool = False,
) -> LabelMap:
    """Combine path and region-grow output into a weak label map.

    Path pixels are drivable and win all ties; region-grown obstacle pixels
    are obstacle; everything else stays unknown. The grown drivable set is
    only used when ``use_rg_drivable`` is set (rule-based baseline behavior):
    it over-extends onto rough shoulders, so the default keeps path-only
    drivable labels.
    """
    vp = np.asarray(vp, dtype=bool)
    if vp.shape != hmap.valid.shape:
        raise ValueError("path mask / height map shape mismatch")
    codes = np.zeros(vp.shape, dtype=np.uint8)
    if use_rg_drivable and rg.drivable:
        idx = tuple(np.array(sorted(rg.drivable)).T)
        codes[idx] = Label.DRI
    if rg.obstacle:
        idx = tuple(np.array(sorted(rg.obstacle)).T)
        codes[idx] = Label.OBS
    codes[vp] = Label.DRI
    return LabelMap(codes, Role.WEAK)
