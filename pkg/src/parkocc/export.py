"""ASCII PLY export of voxel grids, one colored cube per occupied voxel."""

from __future__ import annotations

import numpy as np

from .constants import FREE_LABELS

# wall yellow, road purple, lane line green, parking line red, other stable blue
PALETTE = {
    1: (255, 215, 0),
    2: (128, 0, 160),
    3: (0, 170, 60),
    4: (220, 20, 20),
    5: (30, 90, 255),
}
DEFAULT_COLOR = (160, 160, 160)
OCCUPIED_COLOR = (0, 0, 0)

_CUBE_CORNERS = np.array(
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
    dtype=np.float64,
)
# counter-clockwise seen from outside
_CUBE_TRIANGLES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # -z
        [4, 5, 6], [4, 6, 7],  # +z
        [0, 1, 5], [0, 5, 4],  # -y
        [3, 7, 6], [3, 6, 2],  # +y
        [0, 4, 7], [0, 7, 3],  # -x
        [1, 2, 6], [1, 6, 5],  # +x
    ]
)


def voxel_mesh(labels, origin, voxel_size, palette=None, color=None):
    """Vertices (V, 3), vertex colors (V, 3) and triangles (F, 3) for occupied voxels."""
    labels = np.asarray(labels)
    palette = PALETTE if palette is None else palette
    occupied = np.argwhere(~np.isin(labels, FREE_LABELS))
    corners = np.asarray(origin, dtype=np.float64) + (occupied[:, None, :] + _CUBE_CORNERS) * voxel_size
    ids = labels[tuple(occupied.T)]
    if color is not None:
        rgb = np.tile(np.asarray(color, dtype=np.uint8), (len(ids), 1))
    else:
        rgb = np.array([palette.get(int(k), DEFAULT_COLOR) for k in ids], dtype=np.uint8).reshape(-1, 3)
    vertices = corners.reshape(-1, 3)
    colors = np.repeat(rgb, 8, axis=0)
    faces = (_CUBE_TRIANGLES[None, :, :] + 8 * np.arange(len(occupied))[:, None, None]).reshape(-1, 3)
    return vertices, colors, faces


def write_ply(path, vertices, colors, faces) -> None:
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(vertices)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        f"element face {len(faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(header) + "\n")
        for (x, y, z), (r, g, b) in zip(vertices, colors):
            f.write(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
        for a, b, c in faces:
            f.write(f"3 {a} {b} {c}\n")


def export_grid(labels, spec, path, occupancy=False) -> tuple[int, int]:
    """Write a grid as a PLY mesh; returns (vertex count, face count)."""
    mesh = voxel_mesh(labels, spec.origin, spec.voxel_size, color=OCCUPIED_COLOR if occupancy else None)
    write_ply(path, *mesh)
    return len(mesh[0]), len(mesh[2])


def read_ply_counts(path) -> tuple[int, int]:
    vertices = faces = 0
    with open(path) as f:
        for line in f:
            if line.startswith("element vertex"):
                vertices = int(line.split()[-1])
            elif line.startswith("element face"):
                faces = int(line.split()[-1])
            elif line.strip() == "end_header":
                break
    return vertices, faces
