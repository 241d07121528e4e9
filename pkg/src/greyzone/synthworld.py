"""Procedurally generated off-road scenes with known ground truth.

Each scene is built in the frame of the middle trajectory pose (the ego
reference): a smooth curved corridor of drivable road, grey shoulders with
a low berm and intermediate texture, rough obstacle terrain beyond, and
discrete vertical prominences. The driver's swath stays strictly inside
the corridor. Visibility is computed with a polar horizon sweep from the
central poses, so tall obstacles cast occlusion shadows; cells invisible
from every pose have no LiDAR return and are unknown in the ground truth.

Scene texture ordering is deliberate: road << shoulder << open terrain
roughness, so the ambiguous class sits between the two others in feature
space. All randomness comes from the per-scene seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autolabel import polyline_distance_field, project_vehicle_path
from .bev import PointCloud, Pose2p5D, pixel_centers, quantize_height, world_to_pixel
from .grids import DEFAULT_HEIGHT_WINDOW, HeightMap, Label, LabelMap, Role
from .pgmio import atomic_write_bytes, read_pgm, write_pgm

SENSOR_HEIGHT = 2.2  # m above the vehicle's ground cell (roof-mounted spinner)
VEHICLE_WIDTH = 2.0  # m
VIS_FRAMES = 5  # poses fused into the validity mask (and the default render)
TRAJ_STEP = 0.45  # m between trajectory poses
EDGE_CLEAR = 1.0  # m the trajectory keeps from the forward/backward grid edge
MAX_RANGE = 12.0  # m beam range
N_BEAMS = 480
GRAZING_TOLERANCE = 0.03  # tan slack before a barely-buried cell loses its return
FORMAT_VERSION = 1

# Texture scales relative to SceneSpec.terrain_roughness: road << shoulder <<
# open terrain, plus the shoulder berm height. The undulation wavelength
# range keeps hillsides gentle enough that shadows come mostly from discrete
# obstacles.
ROAD_TEXTURE = 0.07
SHOULDER_TEXTURE = 0.25
OPEN_TEXTURE = 0.65
BERM_HEIGHT = 0.6
UNDULATION_WAVELENGTHS = (10.0, 18.0)

SCENE_FILES = ("height.pgm", "valid.pgm", "human_gt.pgm", "path_mask.pgm", "trajectory.json", "meta.json")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    rows: int = 64
    cols: int = 64
    resolution: float = 0.2
    road_width: float = 3.0  # m, must exceed the vehicle width
    grey_width: float = 1.0  # m of ambiguous shoulder each side
    obstacle_density: float = 4.0  # prominences per 100 m^2
    terrain_roughness: float = 0.3  # m std of the smooth undulation
    curve_amplitude: float = 1.5  # m lateral swing of the corridor

    def __post_init__(self) -> None:
        if self.rows < 16 or self.cols < 16:
            raise ValueError("grid too small")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.road_width <= VEHICLE_WIDTH:
            raise ValueError(f"road width must exceed the vehicle width {VEHICLE_WIDTH}")
        if self.grey_width < 0 or self.obstacle_density < 0 or self.terrain_roughness < 0:
            raise ValueError("physical quantities must be non-negative")
        if self.curve_amplitude < 0:
            raise ValueError("curve amplitude must be non-negative")


@dataclass
class SceneRecord:
    heightmap: HeightMap
    human_gt: LabelMap
    path_mask: np.ndarray
    trajectory: list[Pose2p5D]
    spec: SceneSpec
    terrain: np.ndarray | None = None  # meters, ego-relative; not serialized


def _smooth3(a: np.ndarray, passes: int = 2) -> np.ndarray:
    rows, cols = a.shape
    for _ in range(passes):
        p = np.pad(a, 1, mode="edge")
        acc = np.zeros_like(a)
        for di in range(3):
            for dj in range(3):
                acc += p[di : di + rows, dj : dj + cols]
        a = acc / 9.0
    return a


def _visible_cells(
    terrain: np.ndarray,
    pose: Pose2p5D,
    resolution: float,
    n_beams: int = N_BEAMS,
    max_range: float = MAX_RANGE,
    near_range: float = 1.2,
) -> np.ndarray:
    """Horizon-sweep visibility of cell tops from a sensor above the pose.

    Cells are splatted over the beam sectors their angular extent covers; a
    cell is visible when its elevation angle reaches the running horizon of
    strictly closer cells in its own sector. Cells close to the sensor are
    always visible, cells beyond the beam range never are.
    """
    rows, cols = terrain.shape
    xs, ys = pixel_centers(rows, cols, resolution)
    dx = np.broadcast_to(xs[:, None] - pose.x, (rows, cols)).ravel()
    dy = np.broadcast_to(ys[None, :] - pose.y, (rows, cols)).ravel()
    r = np.hypot(dx, dy)
    r_eff = np.maximum(r, 0.3)
    z_sensor = pose.z + SENSOR_HEIGHT
    tan_up = (terrain.ravel() - z_sensor) / r_eff

    bin_w = 2.0 * math.pi / n_beams
    center_bin = np.floor((np.arctan2(dy, dx) + math.pi) / bin_w).astype(np.int64) % n_beams
    half_extent = np.arctan(0.4 * resolution / r_eff)
    k = np.minimum(np.ceil(half_extent / bin_w).astype(np.int64), n_beams // 8)

    reps = 2 * k + 1
    total = int(reps.sum())
    starts = np.concatenate(([0], np.cumsum(reps)[:-1]))
    offsets = np.arange(total) - np.repeat(starts + k, reps)
    bins = (np.repeat(center_bin, reps) + offsets) % n_beams
    cell_of = np.repeat(np.arange(r.size), reps)

    order = np.lexsort((np.repeat(r, reps), bins))
    b_s = bins[order]
    t_s = np.repeat(tan_up, reps)[order]
    # Segmented exclusive prefix-max: biasing by sector index keeps the
    # global running max local to each sector (|tan| is bounded well below
    # the 1e6 sector stride).
    biased = t_s + b_s * 1e6
    inc = np.maximum.accumulate(biased)
    exc = np.empty_like(inc)
    exc[0] = -np.inf
    exc[1:] = inc[:-1]
    seg_start = np.empty(b_s.size, dtype=bool)
    seg_start[0] = True
    seg_start[1:] = b_s[1:] != b_s[:-1]
    exc[seg_start] = -np.inf
    horizon = exc - b_s * 1e6

    at_center = offsets[order] == 0
    visible = np.zeros(r.size, dtype=bool)
    # Grazing tolerance: a cell whose top sits barely under the horizon still
    # catches partial returns from a dense spinning scanner.
    visible[cell_of[order][at_center]] = t_s[at_center] >= horizon[at_center] - GRAZING_TOLERANCE
    visible |= r <= near_range
    visible &= r <= max_range
    return visible.reshape(rows, cols)


def _point_polyline_distance(x: float, y: float, verts: np.ndarray) -> float:
    a = verts[:-1]
    b = verts[1:]
    if len(verts) == 1:
        return float(math.hypot(x - verts[0, 0], y - verts[0, 1]))
    d = b - a
    seg2 = np.maximum((d**2).sum(axis=1), 1e-12)
    t = np.clip(((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / seg2, 0.0, 1.0)
    return float(np.hypot(x - (a[:, 0] + t * d[:, 0]), y - (a[:, 1] + t * d[:, 1])).min())


def generate_scene(spec: SceneSpec) -> SceneRecord:
    """Build one deterministic scene from its spec.

    The corridor follows a sum of two cosine arcs with zero offset and zero
    heading at the grid center, so the middle trajectory pose is exactly the
    ego reference. Obstacles are rejection-placed clear of the corridor and
    shoulders; the rasterized vehicle swath is asserted to stay inside the
    drivable band.
    """
    rng = np.random.default_rng(spec.seed)
    rows, cols, res = spec.rows, spec.cols, spec.resolution
    half_x = rows * res / 2.0
    half_y = cols * res / 2.0
    road_half = spec.road_width / 2.0
    margin = 0.8
    room = half_y - (road_half + spec.grey_width) - margin
    if room <= 0:
        raise ValueError("corridor and shoulders do not fit in the grid")

    amp = min(spec.curve_amplitude, room) * rng.uniform(0.55, 1.0)
    lam1, lam2 = rng.uniform(9.0, 16.0), rng.uniform(5.0, 9.0)
    sg1, sg2 = rng.choice((-1.0, 1.0)), rng.choice((-1.0, 1.0))
    a2 = amp * rng.uniform(0.15, 0.35)
    a1 = amp - a2
    w1, w2 = 2.0 * math.pi / lam1, 2.0 * math.pi / lam2

    def f(x):
        return sg1 * a1 * 0.5 * (np.cos(w1 * x) - 1.0) + sg2 * a2 * 0.5 * (np.cos(w2 * x) - 1.0)

    def fprime(x):
        return -sg1 * a1 * 0.5 * w1 * np.sin(w1 * x) - sg2 * a2 * 0.5 * w2 * np.sin(w2 * x)

    # Corridor distance field uses an extended polyline so the band is well
    # defined out to the grid corners; the trajectory is its inner part.
    n_in = int(math.floor((half_x - EDGE_CLEAR) / TRAJ_STEP))
    n_ext = int(math.floor((half_x + 1.0) / TRAJ_STEP))
    xs_ext = (np.arange(2 * n_ext + 1) - n_ext) * TRAJ_STEP
    ext_verts = np.column_stack([xs_ext, f(xs_ext)])
    dist = polyline_distance_field(ext_verts, rows, cols, res)

    dri_band = dist <= road_half
    gre_band = (dist <= road_half + spec.grey_width) & ~dri_band
    outside = ~(dri_band | gre_band)

    xs, ys = pixel_centers(rows, cols, res)
    gx = np.broadcast_to(xs[:, None], (rows, cols))
    gy = np.broadcast_to(ys[None, :], (rows, cols))

    rough = spec.terrain_roughness
    base = np.zeros((rows, cols))
    for _ in range(3):
        theta = rng.uniform(0.0, 2.0 * math.pi)
        lam = rng.uniform(*UNDULATION_WAVELENGTHS)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        kx, ky = 2.0 * math.pi / lam * math.cos(theta), 2.0 * math.pi / lam * math.sin(theta)
        base += np.cos(kx * gx + ky * gy + phase)
    if rough > 0 and base.std() > 0:
        base *= rough / base.std()
    else:
        base[:] = 0.0

    texture = _smooth3(rng.standard_normal((rows, cols)), passes=2)
    tstd = texture.std()
    if tstd > 0:
        texture /= tstd
    sigma = np.where(
        dri_band, ROAD_TEXTURE * rough, np.where(gre_band, SHOULDER_TEXTURE * rough, OPEN_TEXTURE * rough)
    )

    # The graded roadbed: large-scale undulation is flattened under the
    # corridor and ramps back in across the shoulder.
    ramp = np.clip((dist - road_half) / max(spec.grey_width, 0.6), 0.0, 1.0)
    ramp = ramp * ramp * (3.0 - 2.0 * ramp)

    berm = np.zeros((rows, cols))
    berm_h = BERM_HEIGHT * rough * rng.uniform(0.8, 1.25)
    if spec.grey_width > 0 and berm_h > 0:
        berm = np.where(
            gre_band, berm_h * np.sin(math.pi * np.clip((dist - road_half) / spec.grey_width, 0.0, 1.0)), 0.0
        )

    terrain = base * ramp + texture * sigma + berm

    area = rows * res * cols * res
    n_obstacles = int(round(spec.obstacle_density * area / 100.0))
    obstacle_mask = np.zeros((rows, cols), dtype=bool)
    clear = road_half + spec.grey_width + 0.4
    for _ in range(n_obstacles):
        radius = rng.uniform(0.25, 0.7)
        height = rng.uniform(0.7, 2.4)
        for _attempt in range(200):
            ox = rng.uniform(-half_x + margin, half_x - margin)
            oy = rng.uniform(-half_y + margin, half_y - margin)
            if _point_polyline_distance(ox, oy, ext_verts) > clear + radius:
                fp = (gx - ox) ** 2 + (gy - oy) ** 2 <= radius**2
                terrain = np.where(fp, terrain + height, terrain)
                obstacle_mask |= fp
                break

    center = world_to_pixel((0.0, 0.0), rows, cols, res)
    assert center is not None
    terrain = terrain - terrain[center]

    xs_in = (np.arange(2 * n_in + 1) - n_in) * TRAJ_STEP
    trajectory = []
    for x in xs_in:
        y = float(f(x))
        px = world_to_pixel((x, y), rows, cols, res)
        if px is None:
            raise ValueError("trajectory leaves the grid; spec inconsistent")
        trajectory.append(Pose2p5D(float(x), y, float(terrain[px]), float(math.atan(fprime(x)))))

    path_mask = project_vehicle_path(trajectory, VEHICLE_WIDTH, rows, cols, res)
    if not dri_band[path_mask].all():
        raise RuntimeError("generator bug: vehicle swath left the corridor")

    mid = len(trajectory) // 2
    vis = np.zeros((rows, cols), dtype=bool)
    for pose in trajectory[mid - (VIS_FRAMES - 1) // 2 : mid - (VIS_FRAMES - 1) // 2 + VIS_FRAMES]:
        vis |= _visible_cells(terrain, pose, res)
    valid = vis | path_mask

    codes = np.where(valid, quantize_height(terrain, DEFAULT_HEIGHT_WINDOW), 0)
    heightmap = HeightMap(codes, valid, res, DEFAULT_HEIGHT_WINDOW)

    gt = np.full((rows, cols), np.uint8(Label.GRE if rough == 0 else Label.OBS))
    gt[gre_band] = Label.GRE
    gt[dri_band] = Label.DRI
    gt[obstacle_mask] = Label.OBS
    gt[~valid] = Label.UNK

    return SceneRecord(heightmap, LabelMap(gt, Role.HUMAN_GT), path_mask, trajectory, spec, terrain)


def render_pointclouds(scene: SceneRecord, frames: int = VIS_FRAMES) -> list[PointCloud]:
    """Sample the terrain surface from consecutive central poses.

    Each frame returns one point per cell visible from its pose, at the
    cell center, expressed in that pose's sensor frame. The middle frame
    additionally carries returns for the driven swath (the sensor saw that
    ground while passing over it), matching the scene's validity mask, so
    aggregating the default number of frames reconstructs the height map at
    every valid cell up to quantization.
    """
    if frames < 1:
        raise ValueError("need at least one frame")
    if frames > len(scene.trajectory):
        raise ValueError("more frames than trajectory poses")
    if scene.terrain is None:
        raise ValueError("scene carries no terrain surface (loaded from disk?)")
    rows, cols = scene.terrain.shape
    res = scene.spec.resolution
    xs, ys = pixel_centers(rows, cols, res)
    mid = len(scene.trajectory) // 2
    start = min(max(mid - (frames - 1) // 2, 0), len(scene.trajectory) - frames)
    clouds = []
    for i in range(frames):
        pose = scene.trajectory[start + i]
        vis = _visible_cells(scene.terrain, pose, res)
        if start + i == mid:
            vis |= scene.path_mask
        jj, kk = np.nonzero(vis)
        wx = xs[jj]
        wy = ys[kk]
        wz = scene.terrain[jj, kk]
        c, s = math.cos(-pose.yaw), math.sin(-pose.yaw)
        px = c * (wx - pose.x) - s * (wy - pose.y)
        py = s * (wx - pose.x) + c * (wy - pose.y)
        clouds.append(PointCloud(np.column_stack([px, py, wz - pose.z]), pose))
    return clouds


def save_scene(dirpath: str | Path, rec: SceneRecord) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    write_pgm(d / "height.pgm", rec.heightmap.height, 255)
    write_pgm(d / "valid.pgm", rec.heightmap.valid.astype(np.uint8) * 255, 255)
    write_pgm(d / "human_gt.pgm", rec.human_gt.labels, 255)
    write_pgm(d / "path_mask.pgm", rec.path_mask.astype(np.uint8) * 255, 255)
    traj = {"poses": [[p.x, p.y, p.z, p.yaw] for p in rec.trajectory]}
    atomic_write_bytes(d / "trajectory.json", json.dumps(traj, sort_keys=True).encode("utf-8"))
    meta = {
        "format_version": FORMAT_VERSION,
        "spec": asdict(rec.spec),
        "height_window": list(rec.heightmap.window),
    }
    atomic_write_bytes(d / "meta.json", json.dumps(meta, sort_keys=True).encode("utf-8"))


def load_scene(dirpath: str | Path) -> SceneRecord:
    d = Path(dirpath)
    for name in SCENE_FILES:
        if not (d / name).exists():
            raise FileNotFoundError(f"{d}: missing {name}")
    meta = json.loads((d / "meta.json").read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{d}: unsupported scene format {meta.get('format_version')}")
    spec = SceneSpec(**meta["spec"])
    window = tuple(meta["height_window"])
    height, _ = read_pgm(d / "height.pgm")
    valid_raw, _ = read_pgm(d / "valid.pgm")
    gt, _ = read_pgm(d / "human_gt.pgm")
    path_raw, _ = read_pgm(d / "path_mask.pgm")
    traj = json.loads((d / "trajectory.json").read_text())
    poses = [Pose2p5D(*vals) for vals in traj["poses"]]
    heightmap = HeightMap(height, valid_raw > 0, spec.resolution, window)
    return SceneRecord(heightmap, LabelMap(gt, Role.HUMAN_GT), path_raw > 0, poses, spec, None)
