"""Single-frame voxelization and multi-frame fusion with majority-vote labels.

Each voxel receives the most frequent semantic id among the points binned into
it; ties go to the smallest id and voxels without points stay 0. Fusion pools
the labeled points of a window of sweeps, expressed in the target sweep's LiDAR
frame, into one histogram. Pooling before the vote gives the same result as
voting over separately accumulated prior/past histograms that are merged
afterwards, since both are the argmax of the same multiset.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import load_kv, parse_tuple
from .constants import EMPTY_LABEL, GRID_DIMS, GRID_ORIGIN, INVALID_LABEL, VOXEL_SIZE
from .errors import FrameIndexError, MissingArtifactError, UnlabeledInputError, ValidationError
from .kitti_io import PointCloudFrame
from .transforms import apply, lidar_to_lidar

log = logging.getLogger(__name__)

_LABEL_SPAN = 1 << 16


@dataclass(frozen=True)
class GridSpec:
    dims: tuple = GRID_DIMS
    voxel_size: float = VOXEL_SIZE
    origin: tuple = GRID_ORIGIN

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        if len(self.dims) != 3 or min(self.dims) <= 0:
            raise ValidationError(f"grid dims must be three positive integers, got {self.dims}")
        if len(self.origin) != 3:
            raise ValidationError(f"grid origin must have three coordinates, got {self.origin}")
        if not self.voxel_size > 0:
            raise ValidationError(f"voxel size must be positive, got {self.voxel_size}")

    @property
    def extent(self) -> tuple:
        return tuple(d * self.voxel_size for d in self.dims)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def bin(self, xyz) -> tuple[np.ndarray, np.ndarray]:
        """Integer voxel indices of points and the mask of those inside the grid.

        Cells are half-open, so a point on the far boundary falls outside.
        """
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        idx = np.floor((xyz - np.asarray(self.origin)) / self.voxel_size)
        inside = np.all((idx >= 0) & (idx < np.asarray(self.dims)), axis=1)
        return idx.astype(np.int64), inside

    def voxel_corner(self, index) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(index, dtype=np.float64) * self.voxel_size

    def halved(self) -> "GridSpec":
        return GridSpec(tuple(d // 2 for d in self.dims), self.voxel_size * 2, self.origin)


@dataclass(eq=False)
class SemanticVoxelGrid:
    """Dense grid of semantic ids: 0 empty, 255 invalid, 1..254 real classes."""

    spec: GridSpec
    labels: np.ndarray
    n_points: int = 0
    n_discarded: int = 0
    window: tuple | None = None
    truncated: bool = False

    @classmethod
    def empty(cls, spec=None):
        spec = spec or GridSpec()
        return cls(spec, np.zeros(spec.dims, dtype=np.uint16))

    def nonempty_count(self) -> int:
        return int(np.count_nonzero((self.labels != EMPTY_LABEL) & (self.labels != INVALID_LABEL)))

    def same_labels(self, other) -> bool:
        return self.labels.shape == other.labels.shape and np.array_equal(self.labels, other.labels)


class VoxelHistogram:
    """Per-voxel label counts, kept sparse as sorted (voxel, label) keys.

    Histograms built from disjoint point sets can be merged in any order and
    finalize to the same grid.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.keys = np.zeros(0, dtype=np.int64)
        self.counts = np.zeros(0, dtype=np.int64)
        self.n_points = 0
        self.n_discarded = 0

    def add(self, xyz, labels) -> "VoxelHistogram":
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        idx, inside = self.spec.bin(xyz)
        if len(idx) != len(labels):
            raise ValueError(f"{len(labels)} labels for {len(idx)} points")
        self.n_points += len(idx)
        self.n_discarded += int(np.count_nonzero(~inside))
        lin = np.ravel_multi_index(tuple(idx[inside].T), self.spec.dims)
        keys, counts = np.unique(lin * _LABEL_SPAN + labels[inside], return_counts=True)
        self._combine(keys, counts)
        return self

    def merge(self, other: "VoxelHistogram") -> "VoxelHistogram":
        if other.spec != self.spec:
            raise ValueError("cannot merge histograms over different grids")
        self.n_points += other.n_points
        self.n_discarded += other.n_discarded
        self._combine(other.keys, other.counts)
        return self

    def _combine(self, keys, counts):
        if not len(self.keys):
            self.keys, self.counts = keys.astype(np.int64), counts.astype(np.int64)
            return
        all_keys = np.concatenate([self.keys, keys])
        all_counts = np.concatenate([self.counts, counts])
        uniq, inv = np.unique(all_keys, return_inverse=True)
        summed = np.zeros(len(uniq), dtype=np.int64)
        np.add.at(summed, inv, all_counts)
        self.keys, self.counts = uniq, summed

    def finalize(self) -> SemanticVoxelGrid:
        flat = np.zeros(self.spec.n_voxels, dtype=np.uint16)
        if len(self.keys):
            vox = self.keys // _LABEL_SPAN
            lab = self.keys % _LABEL_SPAN
            # per voxel: highest count first, then smallest id
            order = np.lexsort((lab, -self.counts, vox))
            vox, lab = vox[order], lab[order]
            first = np.ones(len(vox), dtype=bool)
            first[1:] = vox[1:] != vox[:-1]
            flat[vox[first]] = lab[first]
        return SemanticVoxelGrid(
            self.spec, flat.reshape(self.spec.dims), self.n_points, self.n_discarded
        )


def voxelize(frame: PointCloudFrame, spec: GridSpec | None = None) -> SemanticVoxelGrid:
    spec = spec or GridSpec()
    if len(frame) and not frame.is_labeled:
        raise UnlabeledInputError(f"sweep has {len(frame)} points but no labels")
    return VoxelHistogram(spec).add(frame.xyz, frame.labels).finalize()


@dataclass(frozen=True)
class FusionConfig:
    prior_scan: int = 0
    past_scan: int = 0

    def __post_init__(self):
        for name in ("prior_scan", "past_scan"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValidationError(f"{name} must be a non-negative integer, got {value}")
            object.__setattr__(self, name, int(value))


_KEY_ALIASES = {"priorScan": "prior_scan", "pastScan": "past_scan", "priorscan": "prior_scan", "pastscan": "past_scan"}


def fusion_settings(values: dict) -> tuple[FusionConfig, GridSpec]:
    """Build fusion and grid settings from ``key = value`` pairs; unknown keys are ignored."""
    v = {_KEY_ALIASES.get(k, k): val for k, val in values.items()}
    try:
        config = FusionConfig(int(v.get("prior_scan", 0)), int(v.get("past_scan", 0)))
        spec_kw = {}
        if "dims" in v:
            spec_kw["dims"] = parse_tuple(str(v["dims"]), int)
        if "voxel_size" in v:
            spec_kw["voxel_size"] = float(v["voxel_size"])
        if "origin" in v:
            spec_kw["origin"] = parse_tuple(str(v["origin"]), float)
        return config, GridSpec(**spec_kw)
    except ValueError as e:
        raise ValidationError(f"bad fusion setting: {e}") from None


def load_fusion_config(path) -> tuple[FusionConfig, GridSpec]:
    return fusion_settings(load_kv(path))


def fusion_window(t: int, n: int, config: FusionConfig) -> tuple[int, int, bool]:
    """Inclusive frame window around ``t`` clipped to ``[0, n)``, and whether it was clipped."""
    lo, hi = t - config.prior_scan, t + config.past_scan
    truncated = lo < 0 or hi > n - 1
    return max(0, lo), min(n - 1, hi), truncated


def fuse(
    t: int,
    sequence,
    config: FusionConfig | None = None,
    spec: GridSpec | None = None,
    threads: int = 1,
) -> SemanticVoxelGrid:
    """Densify sweep ``t`` with its neighbours and voxelize the pooled cloud.

    ``sequence`` needs ``len()``, ``load_frame(i)``, ``calib`` and ``poses``
    (see :class:`~parkocc.kitti_io.SequenceDir`).
    """
    config = config or FusionConfig()
    spec = spec or GridSpec()
    n = len(sequence)
    if not 0 <= t < n:
        raise FrameIndexError(t, n)
    lo, hi, truncated = fusion_window(t, n, config)
    if truncated:
        log.info("frame %d: fusion window truncated to [%d, %d]", t, lo, hi)

    window = range(lo, hi + 1)
    if lo != hi:
        calib = sequence.calib
        poses = sequence.poses
        if len(poses) <= hi:
            raise MissingArtifactError(len(poses), "pose", f"poses cover {len(poses)} frames, window needs {hi + 1}")

    def accumulate(i):
        frame = sequence.load_frame(i)
        if len(frame) and not frame.is_labeled:
            raise MissingArtifactError(i, "labels")
        xyz = frame.xyz
        if i != t:
            xyz = apply(lidar_to_lidar(i, t, calib, poses), xyz)
        return VoxelHistogram(spec).add(xyz, frame.labels)

    if threads > 1 and len(window) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(accumulate, window))
    else:
        parts = [accumulate(i) for i in window]

    hist = VoxelHistogram(spec)
    for part in parts:
        hist.merge(part)
    grid = hist.finalize()
    grid.window = (lo, hi)
    grid.truncated = truncated
    return grid
