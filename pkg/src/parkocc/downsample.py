"""2x reduction of a semantic grid to a class-agnostic occupancy grid.

Each output cell covers a 2x2x2 block of source voxels. The block is occupied
when fewer than ``threshold`` of its voxels are empty (0) or invalid (255).
Only membership in {0, 255} matters, so the result is the same whether or not
the source labels were compacted first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import FREE_LABELS
from .errors import DimensionError, ValidationError

BLOCK_VOLUME = 8


@dataclass(frozen=True)
class DownsampleConfig:
    # 8: occupied as soon as one sub-voxel holds a real class
    threshold: int = BLOCK_VOLUME

    def __post_init__(self):
        if int(self.threshold) != self.threshold or not 1 <= self.threshold <= BLOCK_VOLUME:
            raise ValidationError(f"threshold must be an integer in [1, {BLOCK_VOLUME}], got {self.threshold}")


@dataclass(eq=False)
class OccupancyGrid:
    cells: np.ndarray  # uint8, 1 occupied / 0 free

    @property
    def dims(self):
        return self.cells.shape

    def occupied_count(self) -> int:
        return int(np.count_nonzero(self.cells))


def free_counts(labels) -> np.ndarray:
    """Number of {0, 255} voxels in every 2x2x2 block."""
    labels = np.asarray(labels)
    if labels.ndim != 3 or any(d % 2 for d in labels.shape):
        raise DimensionError(f"source grid dims must be three even numbers, got {labels.shape}")
    x, y, z = labels.shape
    free = np.isin(labels, FREE_LABELS).reshape(x // 2, 2, y // 2, 2, z // 2, 2)
    return free.sum(axis=(1, 3, 5))


def downsample(grid, config: DownsampleConfig | None = None) -> OccupancyGrid:
    config = config or DownsampleConfig()
    labels = getattr(grid, "labels", grid)
    cells = (free_counts(labels) < config.threshold).astype(np.uint8)
    return OccupancyGrid(cells)
