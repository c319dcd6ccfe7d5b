import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parkocc.errors import CapacityError, ParseError, ValidationError
from parkocc.semantics import (
    CLASS_NAMES,
    RemapTable,
    compact,
    decompact,
    default_remap_table,
    format_remap_table,
    parse_remap_table,
    remap,
)
from parkocc.voxel import GridSpec, SemanticVoxelGrid


def test_remap_basic():
    out, n = remap([7, 7, 0], RemapTable({7: 11}))
    assert out.tolist() == [11, 11, 0]
    assert n == 0


def test_remap_unmapped_goes_to_default_and_is_counted():
    out, n = remap([3, 5], RemapTable({}, default_target=0))
    assert out.tolist() == [0, 0]
    assert n == 2


@given(st.lists(st.integers(0, 255), max_size=50))
def test_identity_table(labels):
    table = RemapTable.identity(range(256))
    out, n = remap(labels, table)
    assert out.tolist() == labels and n == 0


@given(st.lists(st.integers(0, 20), max_size=50))
def test_idempotent_when_targets_are_fixed_points(labels):
    table = RemapTable({1: 5, 2: 5, 5: 5, 3: 9, 9: 9})
    once, _ = remap(labels, table)
    twice, _ = remap(once, table)
    assert once.tolist() == twice.tolist()


def test_fixed_points_enforced():
    with pytest.raises(ValidationError):
        RemapTable({0: 3})
    with pytest.raises(ValidationError):
        RemapTable({255: 1})
    assert RemapTable({}).entries[255] == 255


def test_table_text_round_trip():
    table = parse_remap_table("# comment\n7 11   # trailing\n\n40 2\n")
    assert dict(table.entries) == {0: 0, 255: 255, 7: 11, 40: 2}
    assert parse_remap_table(format_remap_table(table)) == table


def test_table_parse_error_line():
    with pytest.raises(ParseError) as e:
        parse_remap_table("1 2\nfoo 3\n")
    assert e.value.line_no == 2


def test_default_table_covers_five_classes():
    table = default_remap_table()
    assert sorted(set(table.entries.values()) - {0, 255}) == [1, 2, 3, 4, 5] == sorted(CLASS_NAMES)


class TestCompact:
    def test_ascending_renumber(self):
        out, fwd, inv = compact(np.array([0, 40, 11, 255, 40]))
        assert out.tolist() == [0, 2, 1, 255, 2]
        assert fwd == {11: 1, 40: 2}
        assert inv == {1: 11, 2: 40}

    def test_all_zero(self):
        grid = np.zeros((4, 4, 2), dtype=np.uint16)
        out, fwd, inv = compact(grid)
        assert not out.any() and fwd == {} and inv == {}

    def test_grid_in_grid_out(self):
        g = SemanticVoxelGrid(GridSpec((2, 2, 2)), np.full((2, 2, 2), 40, dtype=np.uint16))
        out, fwd, _ = compact(g)
        assert isinstance(out, SemanticVoxelGrid) and out.labels.max() == 1

    def test_capacity(self):
        with pytest.raises(CapacityError):
            compact(np.arange(1, 300))

    def test_decompact_inverts(self, rng):
        for _ in range(20):
            g = rng.choice([0, 255, 3, 11, 40, 70, 99, 254], size=(8, 8, 4)).astype(np.uint16)
            out, fwd, inv = compact(g)
            np.testing.assert_array_equal(decompact(out, inv), g)
            # equality structure is preserved
            a, b = g.ravel(), out.ravel()
            np.testing.assert_array_equal(a[:, None] == a[None, :], b[:, None] == b[None, :])
