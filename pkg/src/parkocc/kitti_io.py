"""Readers and writers for the on-disk artifacts of a SemanticKITTI-style sequence.

Layout of a sequence directory::

    <root>/calib.txt
    <root>/poses.txt
    <root>/velodyne/000000.bin   float32 x, y, z, intensity per point
    <root>/labels/000000.label   uint32 per point, low 16 bits semantic, high 16 instance
    <root>/voxels/000000.label   uint16 per voxel, 256 x 256 x 32, z fastest
    <root>/voxels/000000.occ     uint8 0/1 per cell, 128 x 128 x 16, z fastest

All binary formats are little-endian. Text matrices are written row-major with
17 significant digits so a float64 survives a write/read cycle unchanged.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .constants import (
    FLOAT_FMT,
    GRID_DIMS,
    LABEL_RECORD_BYTES,
    OCCUPANCY_DIMS,
    POINT_RECORD_BYTES,
)
from .errors import (
    FrameIndexError,
    IncompleteCalibError,
    MalformedFileError,
    MissingArtifactError,
    ParseError,
)

log = logging.getLogger(__name__)

CALIB_KEYS = ("P0", "P1", "P2", "P3", "Tr")


@dataclass
class PointCloudFrame:
    """One LiDAR sweep.

    ``points`` is (N, 4) float64 holding x, y, z in meters and intensity.
    ``labels`` holds N semantic ids, or is empty when the sweep is unlabeled.
    ``instances`` optionally carries the upper 16 bits of the label records.
    """

    points: np.ndarray
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint16))
    instances: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 4)
        self.labels = np.asarray(self.labels, dtype=np.uint16).reshape(-1)
        if self.labels.size and self.labels.size != len(self.points):
            raise ValueError(
                f"{self.labels.size} labels for {len(self.points)} points"
            )
        if self.instances is not None:
            self.instances = np.asarray(self.instances, dtype=np.uint16).reshape(-1)

    def __len__(self):
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    @property
    def is_labeled(self) -> bool:
        return self.labels.size == len(self.points)


@dataclass
class CalibData:
    """Four rectified 3x4 projection matrices and the LiDAR -> left-camera transform."""

    p0: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    p3: np.ndarray
    tr: np.ndarray

    def __post_init__(self):
        for name in ("p0", "p1", "p2", "p3", "tr"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3, 4))

    def matrix(self, key: str) -> np.ndarray:
        return getattr(self, key.lower())

    def __eq__(self, other):
        if not isinstance(other, CalibData):
            return NotImplemented
        return all(np.array_equal(self.matrix(k), other.matrix(k)) for k in CALIB_KEYS)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _decode_text(path, raw: bytes) -> str:
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError as e:
        line_no = raw.count(b"\n", 0, e.start) + 1
        raise ParseError(path, line_no, "file is not ASCII text") from None


def _parse_reals(path, line_no, tokens, expected):
    if len(tokens) != expected:
        raise ParseError(path, line_no, f"expected {expected} numbers, found {len(tokens)}")
    try:
        values = [float(tok) for tok in tokens]
    except ValueError:
        bad = next(t for t in tokens if not _is_float(t))
        raise ParseError(path, line_no, f"non-numeric token {bad!r}") from None
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ParseError(path, line_no, "non-finite value")
    return arr


def _is_float(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def _format_row(values) -> str:
    return " ".join(FLOAT_FMT % v for v in np.asarray(values, dtype=np.float64).ravel())


# ---------------------------------------------------------------------------
# point clouds and labels


def read_point_cloud(path) -> PointCloudFrame:
    raw = _read_bytes(path)
    if len(raw) % POINT_RECORD_BYTES:
        raise MalformedFileError(
            path,
            f"{len(raw)} bytes is not a multiple of the {POINT_RECORD_BYTES}-byte point record",
            byte_count=len(raw),
        )
    pts = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    if not np.all(np.isfinite(pts)):
        bad = int(np.argmax(~np.all(np.isfinite(pts), axis=1)))
        raise MalformedFileError(path, f"non-finite coordinate in point {bad}", byte_count=len(raw))
    return PointCloudFrame(pts.astype(np.float64))


def write_point_cloud(frame, path) -> None:
    points = frame.points if isinstance(frame, PointCloudFrame) else np.asarray(frame)
    data = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 4), dtype="<f4")
    with open(path, "wb") as f:
        f.write(data.tobytes())


def split_label_records(records: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split uint32 label records into (semantic, instance) uint16 arrays."""
    records = np.asarray(records, dtype=np.uint32)
    return (records & 0xFFFF).astype(np.uint16), (records >> 16).astype(np.uint16)


def join_label_records(semantic, instance=None) -> np.ndarray:
    sem = np.asarray(semantic, dtype=np.uint32)
    if instance is None:
        return sem
    return sem | (np.asarray(instance, dtype=np.uint32) << 16)


def read_label_records(path) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) % LABEL_RECORD_BYTES:
        raise MalformedFileError(
            path,
            f"{len(raw)} bytes is not a multiple of the {LABEL_RECORD_BYTES}-byte label record",
            byte_count=len(raw),
        )
    return np.frombuffer(raw, dtype="<u4").astype(np.uint32)


def read_labels(path, return_instance=False):
    """Semantic ids (uint16) of a ``.label`` file; optionally also the instance ids."""
    sem, inst = split_label_records(read_label_records(path))
    if return_instance:
        return sem, inst
    return sem


def write_labels(semantic, path, instance=None) -> None:
    records = join_label_records(semantic, instance)
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(records, dtype="<u4").tobytes())


def read_labeled_frame(bin_path, label_path) -> PointCloudFrame:
    """Read a sweep together with its labels, checking that the counts agree."""
    frame = read_point_cloud(bin_path)
    sem, inst = read_labels(label_path, return_instance=True)
    if sem.size != len(frame):
        raise MalformedFileError(
            label_path,
            f"{sem.size} label records for {len(frame)} points in {bin_path}",
            byte_count=sem.size * LABEL_RECORD_BYTES,
        )
    frame.labels = sem
    frame.instances = inst
    return frame


# ---------------------------------------------------------------------------
# calibration and poses


def read_calib(path) -> CalibData:
    text = _decode_text(path, _read_bytes(path))
    found: dict[str, np.ndarray] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep:
            raise ParseError(path, line_no, "expected 'KEY: values'")
        if key not in CALIB_KEYS:
            log.debug("%s:%d: ignoring calibration key %r", path, line_no, key)
            continue
        if key in found:
            log.warning("%s:%d: duplicate calibration key %s, last one wins", path, line_no, key)
        found[key] = _parse_reals(path, line_no, rest.split(), 12).reshape(3, 4)
    missing = [k for k in CALIB_KEYS if k not in found]
    if missing:
        raise IncompleteCalibError(path, missing)
    return CalibData(*(found[k] for k in CALIB_KEYS))


def write_calib(calib: CalibData, path) -> None:
    lines = [f"{k}: {_format_row(calib.matrix(k))}" for k in CALIB_KEYS]
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_poses(path) -> np.ndarray:
    """(N, 3, 4) float64 array; line k of the file is pose k."""
    text = _decode_text(path, _read_bytes(path))
    rows = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        rows.append(_parse_reals(path, line_no, line.split(), 12))
    if not rows:
        return np.zeros((0, 3, 4))
    return np.stack(rows).reshape(-1, 3, 4)


def write_poses(poses, path) -> None:
    poses = np.asarray(poses, dtype=np.float64).reshape(-1, 3, 4)
    with open(path, "w", newline="\n") as f:
        for pose in poses:
            f.write(_format_row(pose) + "\n")


# ---------------------------------------------------------------------------
# voxel grids


def voxel_index(x, y, z, dims=GRID_DIMS):
    return np.ravel_multi_index((x, y, z), dims)


def voxel_unindex(index, dims=GRID_DIMS):
    return np.unravel_index(index, dims)


def _read_grid(path, dims, dtype):
    raw = _read_bytes(path)
    expected = int(np.prod(dims)) * np.dtype(dtype).itemsize
    if len(raw) != expected:
        raise MalformedFileError(
            path, f"{len(raw)} bytes, expected {expected} for a {dims} grid", byte_count=len(raw)
        )
    return np.frombuffer(raw, dtype=dtype).reshape(dims)


def read_voxel_labels(path, dims=GRID_DIMS) -> np.ndarray:
    return _read_grid(path, tuple(dims), "<u2").astype(np.uint16)


def write_voxel_labels(grid, path) -> None:
    labels = getattr(grid, "labels", grid)
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(labels, dtype="<u2").tobytes())


def read_occupancy(path, dims=OCCUPANCY_DIMS) -> np.ndarray:
    cells = _read_grid(path, tuple(dims), np.uint8).copy()
    if cells.max(initial=0) > 1:
        raise MalformedFileError(path, "occupancy cells must be 0 or 1", byte_count=cells.size)
    return cells


def write_occupancy(grid, path) -> None:
    cells = getattr(grid, "cells", grid)
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(cells, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# sequences


def frame_name(index: int) -> str:
    return f"{index:06d}"


class SequenceDir:
    """Lazy access to a sequence directory on disk.

    Frames are enumerated from ``velodyne/*.bin``; calib and poses are read on
    first use. Parsed sweeps are cached (a fused window re-reads neighbours).
    """

    def __init__(self, root, cache_size=16):
        self.root = Path(root)
        self._load_cached = lru_cache(maxsize=cache_size)(self._load)

    def velodyne_path(self, i):
        return self.root / "velodyne" / f"{frame_name(i)}.bin"

    def label_path(self, i):
        return self.root / "labels" / f"{frame_name(i)}.label"

    def voxel_path(self, i):
        return self.root / "voxels" / f"{frame_name(i)}.label"

    @property
    def calib_path(self):
        return self.root / "calib.txt"

    @property
    def poses_path(self):
        return self.root / "poses.txt"

    def frame_ids(self) -> list[int]:
        vdir = self.root / "velodyne"
        if not vdir.is_dir():
            return []
        ids = []
        for name in os.listdir(vdir):
            stem, ext = os.path.splitext(name)
            if ext == ".bin" and stem.isdigit():
                ids.append(int(stem))
        return sorted(ids)

    def __len__(self):
        ids = self.frame_ids()
        return ids[-1] + 1 if ids else 0

    @property
    def calib(self) -> CalibData:
        if not hasattr(self, "_calib"):
            self._calib = read_calib(self.calib_path)
        return self._calib

    @property
    def poses(self) -> np.ndarray:
        if not hasattr(self, "_poses"):
            self._poses = read_poses(self.poses_path)
        return self._poses

    def _load(self, i):
        bin_path, label_path = self.velodyne_path(i), self.label_path(i)
        if not bin_path.is_file():
            raise MissingArtifactError(i, "point cloud", str(bin_path))
        if not label_path.is_file():
            raise MissingArtifactError(i, "labels", str(label_path))
        try:
            return read_labeled_frame(bin_path, label_path)
        except MalformedFileError as e:
            raise MissingArtifactError(i, "labels" if e.path == str(label_path) else "point cloud", str(e)) from e

    def load_frame(self, i) -> PointCloudFrame:
        n = len(self)
        if not 0 <= i < n:
            raise FrameIndexError(i, n)
        return self._load_cached(i)


class InMemorySequence:
    """Sequence held in memory; same access surface as :class:`SequenceDir`."""

    def __init__(self, frames, calib, poses):
        self.frames = list(frames)
        self.calib = calib
        self.poses = np.asarray(poses, dtype=np.float64).reshape(-1, 3, 4)

    def __len__(self):
        return len(self.frames)

    def load_frame(self, i):
        if not 0 <= i < len(self.frames):
            raise FrameIndexError(i, len(self.frames))
        frame = self.frames[i]
        if frame is None:
            raise MissingArtifactError(i, "point cloud")
        return frame
