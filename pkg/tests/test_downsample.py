import numpy as np
import pytest

from parkocc.downsample import DownsampleConfig, downsample
from parkocc.errors import DimensionError, ValidationError

from oracles import downsample_oracle


def _block(values):
    return np.array(values, dtype=np.uint16).reshape(2, 2, 2)


def test_all_empty_block_is_free():
    assert downsample(_block([0] * 8), DownsampleConfig(8)).cells.tolist() == [[[0]]]


def test_one_real_voxel_occupies():
    assert downsample(_block([11] + [0] * 7), DownsampleConfig(8)).cells.tolist() == [[[1]]]


def test_invalid_counts_like_empty():
    assert downsample(_block([255] * 8)).cells[0, 0, 0] == 0
    assert downsample(_block([255] * 7 + [3])).cells[0, 0, 0] == 1


def test_default_dims():
    assert downsample(np.zeros((256, 256, 32), dtype=np.uint16)).dims == (128, 128, 16)


def test_odd_dims_rejected():
    with pytest.raises(DimensionError):
        downsample(np.zeros((4, 4, 3)))


@pytest.mark.parametrize("threshold", [0, 9, 2.5])
def test_threshold_range(threshold):
    with pytest.raises(ValidationError):
        DownsampleConfig(threshold)


def test_matches_block_counting_oracle(rng):
    for _ in range(10):
        grid = rng.choice([0, 255, 1, 2, 40], p=[0.5, 0.1, 0.2, 0.1, 0.1], size=(16, 16, 4))
        for th in range(1, 9):
            np.testing.assert_array_equal(downsample(grid, DownsampleConfig(th)).cells, downsample_oracle(grid, th))


def test_monotone_in_threshold(rng):
    grid = rng.choice([0, 255, 7], size=(16, 16, 4))
    cells = [downsample(grid, DownsampleConfig(th)).cells for th in range(1, 9)]
    for lo, hi in zip(cells, cells[1:]):
        assert np.all(hi >= lo)


def test_class_agnostic(rng):
    grid = rng.choice([0, 255, 1, 2, 3], size=(16, 16, 4)).astype(np.uint16)
    perm = {1: 3, 2: 1, 3: 2}
    permuted = grid.copy()
    for a, b in perm.items():
        permuted[grid == a] = b
    np.testing.assert_array_equal(downsample(grid).cells, downsample(permuted).cells)


def test_occupied_bounded_by_real_voxels(rng):
    for th in range(1, 9):
        grid = rng.choice([0, 255, 5], p=[0.6, 0.2, 0.2], size=(16, 16, 4))
        assert downsample(grid, DownsampleConfig(th)).occupied_count() <= np.count_nonzero(grid == 5)
