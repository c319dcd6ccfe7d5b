"""Parametric parking-garage scenes and a ray-cast LiDAR that writes SemanticKITTI sequences.

Conventions (right-handed throughout):

* world / ego / LiDAR frames: x forward, y left, z up; the floor is z = 0 and
  the ego frame origin sits on the floor under the vehicle reference point.
* camera frame: z forward (optical axis), x right, y down.

Scenes are built from axis-aligned boxes and horizontal planes only, so every
intersection is closed form.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import kitti_io
from .constants import ORTHONORMAL_TOL
from .errors import ParseError, ValidationError
from .kitti_io import CalibData, PointCloudFrame
from .semantics import (
    SOURCE_BUILDING,
    SOURCE_CAR,
    SOURCE_PARKINGLINE,
    SOURCE_ROAD,
    SOURCE_ROADLINE,
    SOURCE_STATIC,
    SOURCE_WALL,
    RemapTable,
    remap,
)
from .transforms import RigidTransform, orthonormality_error, rotation_z

log = logging.getLogger(__name__)

# camera axes expressed in ego axes: cam_x = -ego_y, cam_y = -ego_z, cam_z = ego_x
EGO_TO_CAMERA = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])

# ego heights of 0.05-2.0 m are where the vehicle body could touch something
OBSTACLE_BAND = (0.05, 2.0)
MAX_STEP_M = 5.0
_BIG = 1e300


# ---------------------------------------------------------------------------
# scene description


@dataclass(frozen=True)
class Box:
    center: tuple
    extents: tuple  # full edge lengths
    label: int

    @property
    def lo(self):
        return np.asarray(self.center) - np.asarray(self.extents) / 2

    @property
    def hi(self):
        return np.asarray(self.center) + np.asarray(self.extents) / 2


@dataclass(frozen=True)
class Plane:
    z: float
    label: int


@dataclass
class SceneSpec:
    primitives: list = field(default_factory=list)

    def __post_init__(self):
        self.primitives = list(self.primitives)

    def validate(self):
        for n, prim in enumerate(self.primitives):
            if not 1 <= prim.label <= 254:
                raise ValidationError(f"primitive {n}: semantic id {prim.label} outside 1..254")
            if isinstance(prim, Box) and min(prim.extents) <= 0:
                raise ValidationError(f"primitive {n}: extents must be positive, got {prim.extents}")

    @property
    def boxes(self):
        return [p for p in self.primitives if isinstance(p, Box)]

    @property
    def planes(self):
        return [p for p in self.primitives if isinstance(p, Plane)]

    def __len__(self):
        return len(self.primitives)


def parse_scene(text: str, path="<scene>") -> SceneSpec:
    prims = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        kind, args = tokens[0].lower(), tokens[1:]
        want = {"box": 7, "plane": 2}.get(kind)
        if want is None:
            raise ParseError(path, line_no, f"unknown primitive {tokens[0]!r}")
        if len(args) != want:
            raise ParseError(path, line_no, f"{kind} takes {want} values, got {len(args)}")
        try:
            nums = [float(a) for a in args[:-1]]
            label = int(args[-1])
        except ValueError:
            raise ParseError(path, line_no, "non-numeric value") from None
        if not all(math.isfinite(v) for v in nums):
            raise ParseError(path, line_no, "non-finite value")
        prim = Box(tuple(nums[:3]), tuple(nums[3:]), label) if kind == "box" else Plane(nums[0], label)
        try:
            SceneSpec([prim]).validate()
        except ValidationError as e:
            raise ParseError(path, line_no, str(e).split(": ", 1)[-1]) from None
        prims.append(prim)
    return SceneSpec(prims)


def load_scene(path) -> SceneSpec:
    return parse_scene(Path(path).read_text(), path)


def format_scene(scene: SceneSpec) -> str:
    lines = []
    for p in scene.primitives:
        if isinstance(p, Box):
            vals = " ".join(repr(float(v)) for v in (*p.center, *p.extents))
            lines.append(f"box {vals} {p.label}")
        else:
            lines.append(f"plane {float(p.z)!r} {p.label}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# sensors


@dataclass(frozen=True)
class LidarConfig:
    channels: int = 64
    range: float = 100.0
    points_per_second: int = 2_200_000
    rotation_hz: int = 10
    upper_deg: float = 2.0
    lower_deg: float = -24.8

    @property
    def points_per_sweep(self) -> int:
        return self.points_per_second // self.rotation_hz

    @property
    def azimuth_steps(self) -> int:
        # 220000 / 64 = 3437.5 rays per channel, floored
        return self.points_per_sweep // self.channels

    @property
    def rays_per_sweep(self) -> int:
        return self.channels * self.azimuth_steps

    def elevations(self) -> np.ndarray:
        return np.deg2rad(np.linspace(self.lower_deg, self.upper_deg, self.channels))

    def azimuths(self) -> np.ndarray:
        return np.arange(self.azimuth_steps) * (2 * np.pi / self.azimuth_steps)

    def directions(self) -> np.ndarray:
        """(channels, azimuth_steps, 3) unit ray directions in the LiDAR frame."""
        el, az = np.meshgrid(self.elevations(), self.azimuths(), indexing="ij")
        return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


@dataclass(frozen=True)
class RigSpec:
    lidar_position: tuple = (0.0, 0.0, 1.80)
    camera_position: tuple = (0.30, 0.0, 1.70)
    stereo_baseline: float = 0.50
    resolution: tuple = (1240, 370)
    fov_deg: float = 80.0

    @property
    def focal(self) -> float:
        return self.resolution[0] / (2 * math.tan(math.radians(self.fov_deg) / 2))

    def intrinsics(self) -> np.ndarray:
        w, h = self.resolution
        f = self.focal
        return np.array([[f, 0.0, w / 2], [0.0, f, h / 2], [0.0, 0.0, 1.0]])

    def projection(self, right=False) -> np.ndarray:
        k = self.intrinsics()
        offset = np.array([-self.stereo_baseline if right else 0.0, 0.0, 0.0])
        return k @ np.hstack([np.eye(3), offset[:, None]])

    def ego_from_lidar(self) -> RigidTransform:
        return RigidTransform.from_rt(np.eye(3), self.lidar_position)

    def ego_from_camera(self) -> RigidTransform:
        return RigidTransform.from_rt(EGO_TO_CAMERA.T, self.camera_position)

    def lidar_to_camera(self) -> RigidTransform:
        return self.ego_from_camera().inverse() @ self.ego_from_lidar()

    def calib(self) -> CalibData:
        left, right = self.projection(), self.projection(right=True)
        # line order: left RGB, right RGB, left gray, right gray (co-located pairs)
        return CalibData(left, right, left, right, self.lidar_to_camera().as_3x4())


@dataclass(frozen=True)
class EgoPose:
    x: float
    y: float
    yaw: float = 0.0

    def world_from_ego(self) -> RigidTransform:
        return RigidTransform.from_rt(rotation_z(self.yaw), (self.x, self.y, 0.0))


@dataclass
class Trajectory:
    poses: list
    region: int = 0

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return Trajectory(self.poses[item], self.region)
        return self.poses[item]

    def validate(self):
        if not self.poses:
            raise ValidationError("trajectory is empty")
        xy = np.array([(p.x, p.y) for p in self.poses], dtype=np.float64)
        if not np.all(np.isfinite(xy)):
            raise ValidationError("trajectory has non-finite positions")
        steps = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        if len(steps) and steps.max() >= MAX_STEP_M:
            k = int(steps.argmax())
            raise ValidationError(f"step {k}->{k + 1} of {steps[k]:.2f} m exceeds {MAX_STEP_M} m at 10 Hz")


# ---------------------------------------------------------------------------
# ray casting


@dataclass
class SweepHits:
    """Raw ray-cast result: one entry per ray that hit something within range."""

    ray_index: np.ndarray
    distance: np.ndarray
    primitive: np.ndarray
    directions: np.ndarray  # LiDAR frame, (n_hits, 3)
    labels: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return self.directions * self.distance[:, None]


class _RayTable:
    def __init__(self, cfg: LidarConfig):
        self.cfg = cfg
        self.dirs = cfg.directions()
        self.tan_el = np.tan(cfg.elevations())
        self.az = cfg.azimuths()


_ray_tables: dict = {}


def _rays(cfg: LidarConfig) -> _RayTable:
    if cfg not in _ray_tables:
        _ray_tables[cfg] = _RayTable(cfg)
    return _ray_tables[cfg]


def _box_ray_subset(table: _RayTable, origin, yaw, lo, hi):
    """Channels and azimuth indices that can possibly reach the box (a superset)."""
    cfg = table.cfg
    ox, oy, oz = origin
    corners = np.array([[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]]) - (ox, oy)
    nearest = np.maximum(np.maximum(lo[:2] - (ox, oy), 0.0), (ox, oy) - hi[:2])
    dmin = float(np.hypot(*np.maximum(nearest, 0.0)))
    dmax = float(np.hypot(corners[:, 0], corners[:, 1]).max())
    if dmin > cfg.range:
        return None, None

    # along a ray of elevation e the height is oz + r tan(e); keep channels whose
    # height over [dmin, dmax] meets [lo_z, hi_z]
    z_a = oz + dmin * table.tan_el
    z_b = oz + dmax * table.tan_el
    channels = np.flatnonzero((np.maximum(z_a, z_b) >= lo[2]) & (np.minimum(z_a, z_b) <= hi[2]))
    if not len(channels):
        return None, None

    if dmin <= 1e-9:
        return channels, slice(None)
    ang = np.arctan2(corners[:, 1], corners[:, 0])
    ref = ang[0]
    delta = (ang - ref + np.pi) % (2 * np.pi) - np.pi
    step = 2 * np.pi / cfg.azimuth_steps
    a0 = ref + delta.min() - yaw - step
    a1 = ref + delta.max() - yaw + step
    k0 = math.floor(a0 / step)
    k1 = math.ceil(a1 / step)
    if k1 - k0 + 1 >= cfg.azimuth_steps:
        return channels, slice(None)
    return channels, np.arange(k0, k1 + 1) % cfg.azimuth_steps


def _slab(origin, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv = np.where(d == 0.0, _BIG, 1.0 / np.where(d == 0.0, 1.0, d))
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    tnear = np.minimum(t1, t2).max(axis=-1)
    tfar = np.maximum(t1, t2).min(axis=-1)
    hit = (tfar >= tnear) & (tnear > 0.0)
    return np.where(hit, tnear, np.inf)


def cast_rays(scene: SceneSpec, ego: EgoPose, cfg: LidarConfig | None = None, rig: RigSpec | None = None) -> SweepHits:
    cfg = cfg or LidarConfig()
    rig = rig or RigSpec()
    table = _rays(cfg)
    world_from_lidar = ego.world_from_ego() @ rig.ego_from_lidar()
    origin = world_from_lidar.translation
    rot = world_from_lidar.rotation
    n_ch, n_az = cfg.channels, cfg.azimuth_steps

    best = np.full((n_ch, n_az), np.inf)
    owner = np.full((n_ch, n_az), -1, dtype=np.int64)
    dirs_world = table.dirs @ rot.T

    for n, prim in enumerate(scene.primitives):
        if isinstance(prim, Plane):
            dz = dirs_world[..., 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(dz != 0.0, (prim.z - origin[2]) / np.where(dz != 0.0, dz, 1.0), np.inf)
            t = np.where(t > 0.0, t, np.inf)
            closer = t < best
            best[closer] = t[closer]
            owner[closer] = n
            continue
        lo, hi = prim.lo, prim.hi
        channels, az = _box_ray_subset(table, origin, ego.yaw, lo, hi)
        if channels is None:
            continue
        if isinstance(az, slice):
            sub = np.s_[channels, :]
        else:
            sub = np.ix_(channels, az)
        t = _slab(origin, dirs_world[sub], lo, hi)
        cur = best[sub]
        closer = t < cur
        if closer.any():
            best[sub] = np.where(closer, t, cur)
            cur_owner = owner[sub]
            owner[sub] = np.where(closer, n, cur_owner)

    flat_best = best.ravel()
    ray_index = np.flatnonzero(flat_best <= cfg.range)
    prim_index = owner.ravel()[ray_index]
    labels = np.array([p.label for p in scene.primitives], dtype=np.uint16)
    return SweepHits(
        ray_index=ray_index,
        distance=flat_best[ray_index],
        primitive=prim_index,
        directions=table.dirs.reshape(-1, 3)[ray_index],
        labels=labels[prim_index] if len(labels) else np.zeros(0, dtype=np.uint16),
    )


def raycast_sweep(scene: SceneSpec, ego: EgoPose, cfg: LidarConfig | None = None, rig: RigSpec | None = None) -> PointCloudFrame:
    """One LiDAR revolution: a labeled point per ray that hits within range, in the LiDAR frame."""
    cfg = cfg or LidarConfig()
    hits = cast_rays(scene, ego, cfg, rig)
    intensity = 1.0 - hits.distance / cfg.range
    points = np.column_stack([hits.points, intensity])
    return PointCloudFrame(points, hits.labels)


def distance_to_primitive(points_world, prim) -> np.ndarray:
    """Unsigned distance from world points to the surface of a primitive."""
    p = np.asarray(points_world, dtype=np.float64).reshape(-1, 3)
    if isinstance(prim, Plane):
        return np.abs(p[:, 2] - prim.z)
    lo, hi = prim.lo, prim.hi
    outside = np.linalg.norm(np.maximum(np.maximum(lo - p, p - hi), 0.0), axis=1)
    inside = np.minimum(p - lo, hi - p).min(axis=1)
    return np.where(inside > 0, inside, outside)


# ---------------------------------------------------------------------------
# sequences


def camera_poses(trajectory: Trajectory, rig: RigSpec) -> np.ndarray:
    """Left-camera pose of every frame relative to frame 0, as (N, 3, 4)."""
    world_from_cam = [p.world_from_ego() @ rig.ego_from_camera() for p in trajectory.poses]
    cam0_from_world = world_from_cam[0].inverse()
    return np.stack([(cam0_from_world @ m).as_3x4() for m in world_from_cam])


def _validate_inputs(scene, trajectory, rig):
    scene.validate()
    trajectory.validate()
    tr = rig.lidar_to_camera()
    if orthonormality_error(tr.rotation) > ORTHONORMAL_TOL:
        raise ValidationError("rig produces a non-rigid LiDAR -> camera transform")


@dataclass
class GenerationResult:
    root: Path
    point_counts: list

    def __len__(self):
        return len(self.point_counts)


def generate_sequence(
    scene: SceneSpec,
    trajectory: Trajectory,
    rig: RigSpec | None = None,
    out=None,
    lidar: LidarConfig | None = None,
    remap_table: RemapTable | None = None,
    threads: int = 1,
) -> GenerationResult:
    """Ray-cast every trajectory pose and write a complete sequence directory.

    If ``remap_table`` is given, primitive ids are treated as simulator tags and
    mapped before the label files are written.
    """
    rig = rig or RigSpec()
    lidar = lidar or LidarConfig()
    _validate_inputs(scene, trajectory, rig)
    root = Path(out)
    (root / "velodyne").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    kitti_io.write_calib(rig.calib(), root / "calib.txt")
    kitti_io.write_poses(camera_poses(trajectory, rig), root / "poses.txt")

    def one(i):
        frame = raycast_sweep(scene, trajectory[i], lidar, rig)
        labels = frame.labels
        if remap_table is not None:
            labels, n_unmapped = remap(labels, remap_table)
            if n_unmapped:
                log.warning("frame %d: %d labels had no remap entry", i, n_unmapped)
        name = kitti_io.frame_name(i)
        kitti_io.write_point_cloud(frame, root / "velodyne" / f"{name}.bin")
        kitti_io.write_labels(labels, root / "labels" / f"{name}.label")
        return len(frame)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = list(pool.map(one, range(len(trajectory))))
    else:
        counts = [one(i) for i in range(len(trajectory))]
    return GenerationResult(root, counts)


# ---------------------------------------------------------------------------
# builtin garage

LOT_X = 90.0
LOT_Y = 60.0
WALL_T = 0.3
CEILING_Z = 3.0
CEILING_T = 0.3
AISLES_Y = (10.0, 30.0, 50.0)
CROSS_AISLES_X = (5.0, 45.0, 85.0)
STALL_BLOCKS_X = ((8.0, 42.0), (48.0, 82.0))
STALL_WIDTH = 2.5
STALL_DEPTH = 5.0
AISLE_HALF_WIDTH = 3.0
LINE_T = 0.02
PILLAR_SIZE = 0.8
PILLAR_ROWS_Y = (20.0, 40.0)
PILLARS_X = (15.0, 25.0, 35.0, 55.0, 65.0, 75.0)
STEP_M = 0.4


def _garage_scene(rng: np.random.Generator) -> SceneSpec:
    prims = [Plane(0.0, SOURCE_ROAD)]
    wall_h = CEILING_Z + CEILING_T
    prims += [
        Box((-WALL_T / 2, LOT_Y / 2, wall_h / 2), (WALL_T, LOT_Y + 2 * WALL_T, wall_h), SOURCE_WALL),
        Box((LOT_X + WALL_T / 2, LOT_Y / 2, wall_h / 2), (WALL_T, LOT_Y + 2 * WALL_T, wall_h), SOURCE_WALL),
        Box((LOT_X / 2, -WALL_T / 2, wall_h / 2), (LOT_X, WALL_T, wall_h), SOURCE_WALL),
        Box((LOT_X / 2, LOT_Y + WALL_T / 2, wall_h / 2), (LOT_X, WALL_T, wall_h), SOURCE_WALL),
        Box(
            (LOT_X / 2, LOT_Y / 2, CEILING_Z + CEILING_T / 2),
            (LOT_X + 2 * WALL_T, LOT_Y + 2 * WALL_T, CEILING_T),
            SOURCE_BUILDING,
        ),
    ]
    for py in PILLAR_ROWS_Y:
        for px in PILLARS_X:
            prims.append(Box((px, py, CEILING_Z / 2), (PILLAR_SIZE, PILLAR_SIZE, CEILING_Z), SOURCE_STATIC))

    for ay in AISLES_Y:
        # dashed lane centre line, 3 m dashes every 6 m
        for x0 in np.arange(2.0, LOT_X - 3.0, 6.0):
            prims.append(Box((x0 + 1.5, ay, LINE_T / 2), (3.0, 0.15, LINE_T), SOURCE_ROADLINE))
        for side in (-1, 1):
            y_near = ay + side * AISLE_HALF_WIDTH
            y_mid = y_near + side * STALL_DEPTH / 2
            for bx0, bx1 in STALL_BLOCKS_X:
                n_stalls = int(round((bx1 - bx0) / STALL_WIDTH))
                for k in range(n_stalls + 1):
                    lx = bx0 + k * (bx1 - bx0) / n_stalls
                    prims.append(Box((lx, y_mid, LINE_T / 2), (0.1, STALL_DEPTH, LINE_T), SOURCE_PARKINGLINE))
                for k in range(n_stalls):
                    if rng.random() >= 0.55:
                        continue
                    cx = bx0 + (k + 0.5) * (bx1 - bx0) / n_stalls + rng.uniform(-0.15, 0.15)
                    length = rng.uniform(4.2, 4.7)
                    width = rng.uniform(1.75, 1.95)
                    height = rng.uniform(1.4, 1.9)
                    # nose in, rear 0.3-0.5 m back from the aisle edge
                    cy = y_near + side * (rng.uniform(0.3, 0.5) + length / 2)
                    prims.append(Box((cx, cy, height / 2), (width, length, height), SOURCE_CAR))
    return SceneSpec(prims)


def _regions() -> list[tuple]:
    """22 straight aisle segments: (start_xy, unit direction, length)."""
    regions = []
    x0, x1 = CROSS_AISLES_X[0], CROSS_AISLES_X[-1]
    for ay in AISLES_Y:
        seg = (x1 - x0) / 5
        for k in range(5):
            regions.append(((x0 + k * seg, ay), (1.0, 0.0), seg))
    y0, y1 = AISLES_Y[0], AISLES_Y[-1]
    for cx, n_seg in zip(CROSS_AISLES_X, (2, 3, 2)):
        seg = (y1 - y0) / n_seg
        for k in range(n_seg):
            regions.append(((cx, y0 + k * seg), (0.0, 1.0), seg))
    return regions


def builtin_parking_lot(seed: int = 0, frames_per_region: int = 40) -> tuple[SceneSpec, list]:
    """Deterministic garage scene and 22 region trajectories for ``seed``.

    Regions 0-14 drive along the three long aisles, 15-21 along the cross aisles.
    """
    rng = np.random.default_rng(seed)
    scene = _garage_scene(rng)
    trajectories = []
    for region, ((sx, sy), (dx, dy), length) in enumerate(_regions()):
        lateral = rng.uniform(-0.3, 0.3)
        step = min(STEP_M, length / max(frames_per_region - 1, 1))
        yaw = math.atan2(dy, dx)
        poses = [
            EgoPose(sx + dx * k * step - dy * lateral, sy + dy * k * step + dx * lateral, yaw)
            for k in range(frames_per_region)
        ]
        trajectories.append(Trajectory(poses, region))
    return scene, trajectories


def obstacle_clearance(scene: SceneSpec, trajectory: Trajectory) -> float:
    """Smallest horizontal distance from a trajectory position to an obstacle box footprint.

    Obstacles are boxes reaching into :data:`OBSTACLE_BAND`; floor markings and
    the ceiling are driven over or under.
    """
    boxes = [b for b in scene.boxes if b.lo[2] < OBSTACLE_BAND[1] and b.hi[2] > OBSTACLE_BAND[0]]
    if not boxes:
        return math.inf
    lo = np.array([b.lo[:2] for b in boxes])
    hi = np.array([b.hi[:2] for b in boxes])
    xy = np.array([(p.x, p.y) for p in trajectory.poses])[:, None, :]
    gap = np.maximum(np.maximum(lo - xy, xy - hi), 0.0)
    return float(np.linalg.norm(gap, axis=-1).min())
