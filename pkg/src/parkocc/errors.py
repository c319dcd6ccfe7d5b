"""Exception hierarchy.

Every parser and validator raises a subclass of :class:`ParkoccError`, so
callers can catch one type for "bad input" without masking programming errors.
"""


class ParkoccError(Exception):
    """Base class for all toolkit errors."""


class MalformedFileError(ParkoccError, ValueError):
    def __init__(self, path, message, byte_count=None):
        self.path = str(path)
        self.byte_count = byte_count
        super().__init__(f"{path}: {message}")


class ParseError(ParkoccError, ValueError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class IncompleteCalibError(ParkoccError, ValueError):
    def __init__(self, path, missing):
        self.path = str(path)
        self.missing = tuple(missing)
        super().__init__(f"{path}: calibration missing key(s) {', '.join(self.missing)}")


class InvalidRotationError(ParkoccError, ValueError):
    def __init__(self, deviation, det=None):
        self.deviation = float(deviation)
        self.det = det
        msg = f"rotation block is not orthonormal: ||R R^T - I|| = {self.deviation:.3g}"
        if det is not None:
            msg += f", det = {det:.6g}"
        super().__init__(msg)


class BehindCameraError(ParkoccError, ValueError):
    def __init__(self, depth):
        self.depth = float(depth)
        super().__init__(f"point is behind the camera (z = {self.depth:g})")


class FrameIndexError(ParkoccError, IndexError):
    def __init__(self, index, length):
        self.index = index
        self.length = length
        super().__init__(f"frame index {index} out of range for sequence of length {length}")


class UnlabeledInputError(ParkoccError, ValueError):
    pass


class MissingArtifactError(ParkoccError, FileNotFoundError):
    def __init__(self, frame, artifact, detail=""):
        self.frame = frame
        self.artifact = artifact
        msg = f"frame {frame}: missing or unreadable {artifact}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class CapacityError(ParkoccError, ValueError):
    pass


class DimensionError(ParkoccError, ValueError):
    pass


class ShapeMismatchError(ParkoccError, ValueError):
    def __init__(self, pred_shape, gt_shape):
        self.pred_shape = tuple(pred_shape)
        self.gt_shape = tuple(gt_shape)
        super().__init__(f"prediction dims {self.pred_shape} do not match ground-truth dims {self.gt_shape}")


class UndefinedMetricError(ParkoccError, ArithmeticError):
    """A ratio metric whose denominator is zero. Distinct from a value of 0.0."""


class ValidationError(ParkoccError, ValueError):
    pass
