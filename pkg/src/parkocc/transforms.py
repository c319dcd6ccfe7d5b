"""Homogeneous rigid transforms between LiDAR, camera and image frames.

A 3x4 matrix [R | t] is lifted to 4x4 by appending the row (0, 0, 0, 1).
Chains compose right to left: ``(A @ B).apply(p) == A.apply(B.apply(p))``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .constants import ORTHONORMAL_TOL
from .errors import BehindCameraError, FrameIndexError, InvalidRotationError


def orthonormality_error(rotation) -> float:
    r = np.asarray(rotation, dtype=np.float64)
    return float(np.linalg.norm(r @ r.T - np.eye(3)))


class RigidTransform:
    """4x4 homogeneous rigid transform with an orthonormal, right-handed rotation."""

    __slots__ = ("matrix",)

    def __init__(self, matrix, validate=True):
        m = np.array(matrix, dtype=np.float64)
        if m.shape == (3, 4):
            m = np.vstack([m, [0.0, 0.0, 0.0, 1.0]])
        if m.shape != (4, 4):
            raise ValueError(f"expected a 3x4 or 4x4 matrix, got shape {m.shape}")
        if validate:
            _check_rotation(m[:3, :3])
            if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
                raise ValueError(f"bottom row must be (0, 0, 0, 1), got {m[3]}")
        m.setflags(write=False)
        self.matrix = m

    @classmethod
    def identity(cls):
        return cls(np.eye(4), validate=False)

    @classmethod
    def from_rt(cls, rotation, translation, validate=True):
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m, validate=validate)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def as_3x4(self) -> np.ndarray:
        return self.matrix[:3].copy()

    def inverse(self) -> "RigidTransform":
        # analytic (R^T, -R^T t); exact up to rounding for orthonormal R
        rt = self.rotation.T
        return RigidTransform.from_rt(rt, -rt @ self.translation, validate=False)

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return RigidTransform(self.matrix @ other.matrix, validate=False)
        return NotImplemented

    def apply(self, points) -> np.ndarray:
        return apply(self, points)

    def __repr__(self):
        return f"RigidTransform({self.as_3x4().tolist()})"


def _check_rotation(rotation):
    dev = orthonormality_error(rotation)
    if dev > ORTHONORMAL_TOL:
        raise InvalidRotationError(dev)
    det = float(np.linalg.det(rotation))
    if abs(det - 1.0) > ORTHONORMAL_TOL:
        raise InvalidRotationError(dev, det)


def lift_3x4(m) -> RigidTransform:
    """Append (0, 0, 0, 1) to a 3x4 rigid matrix, checking its rotation block."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 4):
        raise ValueError(f"expected a 3x4 matrix, got shape {m.shape}")
    return RigidTransform(m)


def apply(transform, points) -> np.ndarray:
    """Transform (N, 3) points (extra columns such as intensity are dropped)."""
    m = transform.matrix if isinstance(transform, RigidTransform) else np.asarray(transform)
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, pts.shape[-1])[:, :3]
    out = pts @ m[:3, :3].T + m[:3, 3]
    return out[0] if single else out


def lidar_to_lidar(i: int, t: int, calib, poses) -> RigidTransform:
    """Transform mapping LiDAR-frame points of scan ``i`` into the LiDAR frame of scan ``t``.

    M = Tr^-1 . pose_t^-1 . pose_i . Tr, where Tr maps LiDAR -> left camera and
    pose_k maps left-camera frame k -> left-camera frame 0.
    """
    poses = np.asarray(poses)
    n = len(poses)
    for idx in (i, t):
        if not 0 <= idx < n:
            raise FrameIndexError(idx, n)
    tr = lift_3x4(calib.tr)
    pose_i = lift_3x4(poses[i])
    pose_t = lift_3x4(poses[t])
    return tr.inverse() @ pose_t.inverse() @ pose_i @ tr


class ImagePoint(NamedTuple):
    u: float
    v: float
    depth: float


def project_to_image(p, point) -> ImagePoint:
    """Project a camera-frame point through a 3x4 projection matrix."""
    x, y, z = (float(c) for c in point[:3])
    if not z > 0:
        raise BehindCameraError(z)
    uh, vh, w = np.asarray(p, dtype=np.float64).reshape(3, 4) @ np.array([x, y, z, 1.0])
    return ImagePoint(uh / w, vh / w, z)


def rotation_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation from a random unit quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_rigid(rng: np.random.Generator, max_translation=10.0) -> RigidTransform:
    return RigidTransform.from_rt(
        random_rotation(rng), rng.uniform(-max_translation, max_translation, 3)
    )
