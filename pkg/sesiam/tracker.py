"""
Inference: initialize from a first-frame box, then for every frame crop a
search region around the previous box, regress the target's offsets inside it
and map them back to frame coordinates. The template features are computed
once per track and never updated.
"""

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple

import cv2
import numpy as np
import torch

from sesiam_helpers.errors import InvalidArgumentError, LostTargetError, TrackingFailureError
from sesiam_helpers.geometry import (
    BoundingBox,
    PatchSize,
    clamp_box,
    decode_offsets,
    ltwh_to_corners,
    corners_to_ltwh,
    translate_box,
)
from sesiam_helpers.load_sequences import SequenceRecord
from sesiam_helpers.sampling import crop_and_resize
from sesiam_helpers.utilities import make_number_printable

from .model import SiameseSENet, image_to_tensor

logger = logging.getLogger(__name__)

MIN_BOX_SIZE = 2.0
STATUS_OK = "ok"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class TrackerState:
    target_ltwh: Tuple[float, float, float, float]
    template_features: torch.Tensor
    delta: float
    frame_index: int = 0

    @property
    def box(self) -> BoundingBox:
        return ltwh_to_corners(*self.target_ltwh)


@dataclass
class TrackResult:
    boxes: List[BoundingBox]
    statuses: List[str]

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def failures(self) -> int:
        return sum(status == STATUS_FAILED for status in self.statuses)


def frame_size_of(frame: np.ndarray) -> PatchSize:
    return PatchSize(float(frame.shape[1]), float(frame.shape[0]))


def enforce_min_size(box: BoundingBox, frame: PatchSize, min_size: float = MIN_BOX_SIZE) -> BoundingBox:
    """Grow `box` around its center to at least `min_size` per side, kept inside the frame."""
    x1, y1, x2, y2 = box
    for axis, limit in ((0, frame.width), (1, frame.height)):
        low, high = (x1, x2) if axis == 0 else (y1, y2)
        side = min(min_size, limit)
        if high - low < side:
            center = (low + high) / 2.0
            low = min(max(center - side / 2.0, 0.0), limit - side)
            high = low + side
        if axis == 0:
            x1, x2 = low, high
        else:
            y1, y2 = low, high
    return BoundingBox(x1, y1, x2, y2)


class Tracker:
    """
    Single-target tracker over a trained `SiameseSENet`.

    The tracker holds no per-track state; every call takes and returns an
    immutable `TrackerState`, so one tracker can serve several tracks.
    """

    def __init__(self, model: SiameseSENet, delta: float = 0.5):
        if not delta >= 0:
            raise InvalidArgumentError(f"delta must be non-negative, got {delta}")
        self.model = model.eval()
        self.config = model.config
        self.delta = delta
        self.template_size = PatchSize(self.config.template_input, self.config.template_input)
        self.detection_size = PatchSize(self.config.detection_input, self.config.detection_input)

    def init(self, frame: np.ndarray, box: BoundingBox) -> TrackerState:
        box = BoundingBox(*(float(value) for value in box))
        if not (box.is_valid() and box.width > 0 and box.height > 0):
            raise InvalidArgumentError(f"initial box {tuple(box)} must have positive area")
        visible = clamp_box(box, frame_size_of(frame))
        if visible.area <= 0:
            raise InvalidArgumentError(f"initial box {tuple(box)} does not intersect the frame")
        template = crop_and_resize(frame, visible, self.template_size) / 255.0
        with torch.no_grad():
            features = self.model.template_features(image_to_tensor(template))
        return TrackerState(corners_to_ltwh(box), features, self.delta, 0)

    def search_region(self, state: TrackerState, frame_size: PatchSize) -> BoundingBox:
        left, top, width, height = state.target_ltwh
        if (
            left >= frame_size.width
            or top >= frame_size.height
            or left + width <= 0
            or top + height <= 0
        ):
            raise LostTargetError(
                f"previous box {state.target_ltwh} lies outside the "
                f"{frame_size.width:g}x{frame_size.height:g} frame"
            )
        region = BoundingBox(
            max(0.0, left - width * state.delta),
            max(0.0, top - height * state.delta),
            min(left + width * (1.0 + state.delta), frame_size.width),
            min(top + height * (1.0 + state.delta), frame_size.height),
        )
        if not (region.width > 0 and region.height > 0):
            raise LostTargetError(f"search region {tuple(region)} has no area")
        return region

    def locate(self, offsets, region: BoundingBox) -> BoundingBox:
        """Map offsets predicted for `region` back to (unordered) frame coordinates."""
        in_crop = decode_offsets(offsets, PatchSize(region.width, region.height))
        return translate_box(in_crop, region.x1, region.y1)

    def update(self, state: TrackerState, frame: np.ndarray) -> Tuple[BoundingBox, TrackerState]:
        frame_size = frame_size_of(frame)
        region = self.search_region(state, frame_size)
        detection = crop_and_resize(frame, region, self.detection_size) / 255.0
        with torch.no_grad():
            offsets = self.model.forward_from_template(
                state.template_features, image_to_tensor(detection)
            )[0]
        offsets = offsets.double().tolist()
        if not all(math.isfinite(value) for value in offsets):
            raise TrackingFailureError(
                f"non-finite network output {offsets} at frame {state.frame_index + 1}",
                last_state=state,
            )
        box = clamp_box(self.locate(offsets, region).normalized(), frame_size)
        box = enforce_min_size(box, frame_size)
        new_state = replace(
            state, target_ltwh=corners_to_ltwh(box), frame_index=state.frame_index + 1
        )
        return box, new_state

    def track_sequence(self, sequence: SequenceRecord) -> TrackResult:
        """
        One pass over a sequence from its first annotation.

        A failed update is reported with status `failed` and the previous box;
        tracking continues from the last good state.
        """
        first = sequence.frame(0)
        state = self.init(first, sequence.annotations[0])
        boxes, statuses = [state.box], [STATUS_OK]
        for index in range(1, len(sequence)):
            try:
                box, state = self.update(state, sequence.frame(index))
                boxes.append(box)
                statuses.append(STATUS_OK)
            except (TrackingFailureError, LostTargetError) as e:
                logger.warning("%s frame %d: %s", sequence.name, index, e)
                state = replace(state, frame_index=state.frame_index + 1)
                boxes.append(state.box)
                statuses.append(STATUS_FAILED)
        return TrackResult(boxes, statuses)


class TrackerSession:
    """Stateful `init` / `update` adapter over a `Tracker`, used by evaluation."""

    def __init__(self, tracker: Tracker):
        self.tracker = tracker
        self.state: Optional[TrackerState] = None

    def init(self, frame: np.ndarray, box: BoundingBox) -> None:
        self.state = self.tracker.init(frame, box)

    def update(self, frame: np.ndarray) -> BoundingBox:
        if self.state is None:
            raise InvalidArgumentError("update called before init")
        box, self.state = self.tracker.update(self.state, frame)
        return box


def write_track_csv(path, result: TrackResult) -> Path:
    """Write `frame_idx,x1,y1,x2,y2,status`, one row per frame, under a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        writer.writerow(["frame_idx", "x1", "y1", "x2", "y2", "status"])
        for index, (box, status) in enumerate(zip(result.boxes, result.statuses)):
            writer.writerow([index, *(make_number_printable(value) for value in box), status])
    return path


def read_track_csv(path) -> TrackResult:
    boxes, statuses = [], []
    with open(path, "r", newline="", encoding="utf-8") as file:
        for row in csv.DictReader(file):
            boxes.append(BoundingBox(*(float(row[key]) for key in ("x1", "y1", "x2", "y2"))))
            statuses.append(row["status"])
    return TrackResult(boxes, statuses)


def dump_annotated_frames(sequence: SequenceRecord, result: TrackResult, directory) -> List[Path]:
    """Draw each output box (green ok, red failed) on its frame and save as PNG."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for index, (box, status) in enumerate(zip(result.boxes, result.statuses)):
        image = cv2.cvtColor(sequence.frame(index), cv2.COLOR_RGB2BGR)
        color = (0, 200, 0) if status == STATUS_OK else (0, 0, 255)
        top_left = (int(round(box.x1)), int(round(box.y1)))
        bottom_right = (int(round(box.x2)) - 1, int(round(box.y2)) - 1)
        cv2.rectangle(image, top_left, bottom_right, color, 1)
        path = directory / f"{index + 1:08d}.png"
        cv2.imwrite(str(path), image)
        written.append(path)
    return written
