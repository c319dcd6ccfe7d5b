"""Semantic id remapping and label compaction."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from types import MappingProxyType

import numpy as np

from .constants import EMPTY_LABEL, INVALID_LABEL
from .errors import CapacityError, ParseError, ValidationError

MAX_ID = 0xFFFF

CLASS_NAMES = {
    1: "wall",
    2: "road",
    3: "traffic-line-lane",
    4: "traffic-line-parking",
    5: "other-stable-feature",
}

# simulator tags used by the builtin scene (sources of the default table)
SOURCE_BUILDING = 3
SOURCE_WALL = 4
SOURCE_ROAD = 1
SOURCE_ROADLINE = 24
SOURCE_PARKINGLINE = 29
SOURCE_STATIC = 20
SOURCE_CAR = 14


@dataclass(frozen=True)
class RemapTable:
    """Map from source id to target id. Unmapped sources go to ``default_target``.

    0 (empty) and 255 (invalid) are always fixed points.
    """

    entries: dict = field(default_factory=dict)
    default_target: int = EMPTY_LABEL

    def __post_init__(self):
        entries = {int(k): int(v) for k, v in dict(self.entries).items()}
        for fixed in (EMPTY_LABEL, INVALID_LABEL):
            if entries.setdefault(fixed, fixed) != fixed:
                raise ValidationError(f"id {fixed} must map to itself, got {entries[fixed]}")
        for src, dst in entries.items():
            if not 0 <= src <= MAX_ID:
                raise ValidationError(f"source id {src} outside 0..{MAX_ID}")
            if not 0 <= dst <= INVALID_LABEL:
                raise ValidationError(f"target id {dst} for source {src} outside 0..255")
        if not 0 <= self.default_target <= INVALID_LABEL:
            raise ValidationError(f"default target {self.default_target} outside 0..255")
        object.__setattr__(self, "entries", MappingProxyType(entries))

    def lookup(self) -> np.ndarray:
        lut = np.full(MAX_ID + 1, self.default_target, dtype=np.uint16)
        src = np.fromiter(self.entries.keys(), dtype=np.int64)
        lut[src] = np.fromiter(self.entries.values(), dtype=np.uint16)
        return lut

    @classmethod
    def identity(cls, ids):
        return cls({i: i for i in ids})


def remap(labels, table: RemapTable) -> tuple[np.ndarray, int]:
    """Apply ``table``; returns the new labels and the number of unmapped substitutions."""
    labels = np.asarray(labels, dtype=np.uint16)
    out = table.lookup()[labels]
    mapped = np.zeros(MAX_ID + 1, dtype=bool)
    mapped[list(table.entries)] = True
    n_unmapped = int(np.count_nonzero(~mapped[labels]))
    return out, n_unmapped


def parse_remap_table(text: str, path="<remap>", default_target=EMPTY_LABEL) -> RemapTable:
    entries = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].split()
        if not body:
            continue
        if len(body) != 2:
            raise ParseError(path, line_no, "expected '<source> <target>'")
        try:
            src, dst = int(body[0]), int(body[1])
        except ValueError:
            raise ParseError(path, line_no, f"non-integer id in {line.strip()!r}") from None
        entries[src] = dst
    try:
        return RemapTable(entries, default_target)
    except ValidationError as e:
        raise ParseError(path, 0, str(e)) from None


def load_remap_table(path, default_target=EMPTY_LABEL) -> RemapTable:
    return parse_remap_table(Path(path).read_text(), path, default_target)


def format_remap_table(table: RemapTable) -> str:
    return "".join(f"{s} {t}\n" for s, t in sorted(table.entries.items()))


def default_remap_table() -> RemapTable:
    text = resources.files(__package__).joinpath("data/default_remap.txt").read_text()
    return parse_remap_table(text, "default_remap.txt")


def compact(labels) -> tuple[np.ndarray, dict[int, int], dict[int, int]]:
    """Renumber the real classes present in a grid to 1..K in ascending order.

    Returns ``(compacted, forward, inverse)``. 0 and 255 are left untouched.
    Accepts a bare label array or anything with a ``labels`` attribute.
    """
    grid = labels if hasattr(labels, "labels") else None
    arr = np.asarray(labels.labels if grid is not None else labels)
    present = np.unique(arr)
    real = [int(v) for v in present if v not in (EMPTY_LABEL, INVALID_LABEL)]
    if len(real) > 254:
        raise CapacityError(f"{len(real)} distinct classes; at most 254 fit in 1..254")
    forward = {src: k for k, src in enumerate(real, start=1)}
    inverse = {k: src for src, k in forward.items()}
    out = arr.copy()
    if real:
        src = np.array(real)
        idx = np.searchsorted(src, arr)
        hit = (idx < len(src)) & (src[np.minimum(idx, len(src) - 1)] == arr)
        out[hit] = (idx[hit] + 1).astype(arr.dtype)
    if grid is not None:
        out = replace(grid, labels=out)
    return out, forward, inverse


def decompact(labels, inverse: dict[int, int]) -> np.ndarray:
    arr = np.asarray(labels)
    out = arr.copy()
    for k, src in inverse.items():
        out[arr == k] = src
    return out
