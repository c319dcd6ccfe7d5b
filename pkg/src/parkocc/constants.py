"""Numeric tolerances and fixed format constants shared by code and tests."""

# rotation blocks: ||R R^T - I|| and |det R - 1|
ORTHONORMAL_TOL = 1e-6
# inverse composition / round trips of chained rigid transforms
ROUND_TRIP_TOL = 1e-9

EMPTY_LABEL = 0
INVALID_LABEL = 255
FREE_LABELS = (EMPTY_LABEL, INVALID_LABEL)

GRID_DIMS = (256, 256, 32)
VOXEL_SIZE = 0.2
GRID_ORIGIN = (0.0, -25.6, -2.0)
OCCUPANCY_DIMS = (128, 128, 16)

POINT_RECORD_BYTES = 16
LABEL_RECORD_BYTES = 4

# text formats use 17 significant digits, enough for a lossless float64 round trip
FLOAT_FMT = "%.17g"
