"""
Box geometry shared by every part of the tracker.

Coordinates are continuous reals with the origin at the top-left pixel corner:
pixel (row i, column j) covers [j, j + 1) x [i, i + 1). Boxes are stored in
corner form (x1, y1, x2, y2). The regression target is a vector of four
center-relative offsets, each a fraction of the patch width or height.
"""

import math
from typing import NamedTuple, Sequence, Tuple

import numpy as np

from .errors import InvalidArgumentError


class BoundingBox(NamedTuple):
    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def is_valid(self) -> bool:
        return (
            all(math.isfinite(value) for value in self)
            and self.x1 <= self.x2
            and self.y1 <= self.y2
        )

    def normalized(self) -> "BoundingBox":
        """Return the box with its corners ordered (x1 <= x2, y1 <= y2)."""
        return BoundingBox(
            min(self.x1, self.x2),
            min(self.y1, self.y2),
            max(self.x1, self.x2),
            max(self.y1, self.y2),
        )


class PatchSize(NamedTuple):
    width: float
    height: float


class RelativeOffsets(NamedTuple):
    o1: float
    o2: float
    o3: float
    o4: float

    def as_array(self) -> np.ndarray:
        return np.asarray(self, dtype=np.float64)


def _require_positive(size: PatchSize, name: str = "patch size") -> None:
    if not (size.width > 0 and size.height > 0):
        raise InvalidArgumentError(
            f"{name} must be strictly positive, got {size.width} x {size.height}"
        )


def encode_offsets(box: BoundingBox, size: PatchSize) -> RelativeOffsets:
    """
    Express a box given in patch coordinates as center-relative offsets.

    Args:
        box: target box in the coordinates of the patch.
        size: patch width and height.

    Returns:
        RelativeOffsets [x1/w - 1/2, y1/h - 1/2, x2/w - 1/2, y2/h - 1/2].
    """
    _require_positive(size)
    w_f, h_f = size
    return RelativeOffsets(
        box.x1 / w_f - 0.5,
        box.y1 / h_f - 0.5,
        box.x2 / w_f - 0.5,
        box.y2 / h_f - 0.5,
    )


def decode_offsets(offsets: Sequence[float], size: PatchSize) -> BoundingBox:
    """
    Turn center-relative offsets back into a box in patch coordinates.

    The network output is unconstrained, so the decoded corners are returned
    as computed; callers that need an ordered box use `BoundingBox.normalized`.
    """
    _require_positive(size)
    w_f, h_f = size
    o1, o2, o3, o4 = (float(value) for value in offsets)
    return BoundingBox(
        o1 * w_f + w_f / 2.0,
        o2 * h_f + h_f / 2.0,
        o3 * w_f + w_f / 2.0,
        o4 * h_f + h_f / 2.0,
    )


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; zero-area boxes score 0 against anything."""
    inter_w = min(a.x2, b.x2) - max(a.x1, b.x1)
    inter_h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    intersection = inter_w * inter_h
    union = a.area + b.area - intersection
    if union <= 0:
        return 0.0
    return min(max(intersection / union, 0.0), 1.0)


def iou_many(a, b) -> np.ndarray:
    """Row-wise IoU of two (N, 4) corner-form arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if a.shape != b.shape:
        raise InvalidArgumentError(
            f"box arrays differ in length: {a.shape[0]} vs {b.shape[0]}"
        )
    inter_w = np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    inter_h = np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    intersection = np.clip(inter_w, 0, None) * np.clip(inter_h, 0, None)
    area_a = np.clip(a[:, 2] - a[:, 0], 0, None) * np.clip(a[:, 3] - a[:, 1], 0, None)
    area_b = np.clip(b[:, 2] - b[:, 0], 0, None) * np.clip(b[:, 3] - b[:, 1], 0, None)
    union = area_a + area_b - intersection
    with np.errstate(divide="ignore", invalid="ignore"):
        overlap = np.where(union > 0, intersection / union, 0.0)
    return np.clip(overlap, 0.0, 1.0)


def center_error(a, b) -> np.ndarray:
    """Euclidean distance between the centers of corner-form boxes, row-wise."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    centers_a = (a[:, :2] + a[:, 2:]) / 2.0
    centers_b = (b[:, :2] + b[:, 2:]) / 2.0
    return np.linalg.norm(centers_a - centers_b, axis=1)


def clamp_box(box: BoundingBox, frame: PatchSize) -> BoundingBox:
    _require_positive(frame, "frame size")
    w_f, h_f = frame
    x1 = min(max(box.x1, 0.0), w_f)
    y1 = min(max(box.y1, 0.0), h_f)
    x2 = min(max(box.x2, 0.0), w_f)
    y2 = min(max(box.y2, 0.0), h_f)
    return BoundingBox(x1, y1, max(x1, x2), max(y1, y2))


def corners_to_ltwh(box: BoundingBox) -> Tuple[float, float, float, float]:
    if box.width < 0 or box.height < 0:
        raise InvalidArgumentError(
            f"box {tuple(box)} has negative width or height"
        )
    return box.x1, box.y1, box.width, box.height


def ltwh_to_corners(left: float, top: float, width: float, height: float) -> BoundingBox:
    if width < 0 or height < 0:
        raise InvalidArgumentError(
            f"width and height must be non-negative, got {width} x {height}"
        )
    return BoundingBox(left, top, left + width, top + height)


def scale_box(box: BoundingBox, sx: float, sy: float) -> BoundingBox:
    return BoundingBox(box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy)


def translate_box(box: BoundingBox, dx: float, dy: float) -> BoundingBox:
    return BoundingBox(box.x1 + dx, box.y1 + dy, box.x2 + dx, box.y2 + dy)


def contains(outer: BoundingBox, inner: BoundingBox) -> bool:
    return (
        outer.x1 <= inner.x1
        and outer.y1 <= inner.y1
        and outer.x2 >= inner.x2
        and outer.y2 >= inner.y2
    )
