"""
Reading and writing GOT-style sequence directories.

Layout of one sequence folder:

    <root>/<sequence_name>/00000001.jpg ...   ordered frames (jpg, jpeg or png)
    <root>/<sequence_name>/groundtruth.txt    one `x,y,w,h` line per frame
    <root>/<sequence_name>/absence.label      optional, one 0/1 line per frame

An optional `<root>/list.txt` fixes the order of the sequences.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import cv2
import numpy as np
from PIL import Image

from .errors import AnnotationParseError, StructureError
from .geometry import BoundingBox, PatchSize, clamp_box, corners_to_ltwh, ltwh_to_corners
from .utilities import make_number_printable

logger = logging.getLogger(__name__)

FRAME_EXTENSIONS = (".jpg", ".jpeg", ".png")
GROUNDTRUTH_FILE = "groundtruth.txt"
ABSENCE_FILE = "absence.label"
LIST_FILE = "list.txt"

Frame = Union[Path, np.ndarray]


@dataclass
class SequenceRecord:
    """
    One annotated sequence.

    Frames are either paths (loaded lazily with OpenCV) or in-memory RGB
    `uint8` arrays. `visibility[k]` is False when the target is absent or
    leaves the frame on frame k.
    """

    name: str
    frames: List[Frame]
    annotations: List[BoundingBox]
    visibility: List[bool] = field(default_factory=list)
    frame_sizes: List[PatchSize] = field(default_factory=list)

    def __post_init__(self):
        if not self.visibility:
            self.visibility = [True] * len(self.annotations)
        if not self.frame_sizes:
            self.frame_sizes = [_array_size(frame) for frame in self.frames]
        lengths = {
            "frames": len(self.frames),
            "annotations": len(self.annotations),
            "visibility": len(self.visibility),
            "frame sizes": len(self.frame_sizes),
        }
        if len(set(lengths.values())) != 1:
            raise StructureError(f"sequence `{self.name}` has inconsistent lengths: {lengths}")
        if not self.frames:
            raise StructureError(f"sequence `{self.name}` has no frames")

    def __len__(self) -> int:
        return len(self.frames)

    def frame(self, index: int) -> np.ndarray:
        """Return frame `index` as an RGB uint8 array."""
        item = self.frames[index]
        if isinstance(item, np.ndarray):
            return item
        return read_frame(item)

    def preload(self) -> "SequenceRecord":
        """Copy of this record with every frame decoded into memory."""
        return SequenceRecord(
            name=self.name,
            frames=[self.frame(index) for index in range(len(self))],
            annotations=list(self.annotations),
            visibility=list(self.visibility),
            frame_sizes=list(self.frame_sizes),
        )

    def visible_indices(self) -> List[int]:
        return [index for index, visible in enumerate(self.visibility) if visible]


def _array_size(frame: Frame) -> PatchSize:
    if isinstance(frame, np.ndarray):
        return PatchSize(float(frame.shape[1]), float(frame.shape[0]))
    with Image.open(frame) as image:
        width, height = image.size
    return PatchSize(float(width), float(height))


def read_frame(path: Path) -> np.ndarray:
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise StructureError(f"cannot read frame `{path}`")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


def write_frame(path: Path, frame: np.ndarray) -> None:
    if not cv2.imwrite(str(path), cv2.cvtColor(frame, cv2.COLOR_RGB2BGR)):
        raise StructureError(f"cannot write frame `{path}`")


def parse_groundtruth_lines(lines: Sequence[str], path="<memory>") -> List[BoundingBox]:
    """
    Parse `x,y,w,h` lines into corner-form boxes.

    Fields may be separated by commas, tabs or spaces. Trailing blank lines are
    ignored; any other malformed line raises `AnnotationParseError` naming the
    file and the 1-based line number.
    """
    while lines and not lines[-1].strip():
        lines = lines[:-1]
    boxes = []
    for line_number, line in enumerate(lines, start=1):
        parts = [part for part in re.split(r"[,\s]+", line.strip()) if part]
        if len(parts) != 4:
            raise AnnotationParseError(path, line_number, line, f"expected 4 values, found {len(parts)}")
        try:
            left, top, width, height = (float(part) for part in parts)
        except ValueError:
            raise AnnotationParseError(path, line_number, line, "values must be numbers")
        if not all(math.isfinite(value) for value in (left, top, width, height)):
            raise AnnotationParseError(path, line_number, line, "values must be finite")
        if width < 0 or height < 0:
            raise AnnotationParseError(path, line_number, line, "width and height must be non-negative")
        boxes.append(ltwh_to_corners(left, top, width, height))
    return boxes


def parse_absence_lines(lines: Sequence[str], path="<memory>") -> List[bool]:
    """Map absence flags to visibility: `1` (absent) -> False, `0` -> True."""
    while lines and not lines[-1].strip():
        lines = lines[:-1]
    visibility = []
    for line_number, line in enumerate(lines, start=1):
        value = line.strip()
        if value not in ("0", "1"):
            raise AnnotationParseError(path, line_number, line, "expected 0 or 1")
        visibility.append(value == "0")
    return visibility


def list_frame_files(path: Path) -> List[Path]:
    return sorted(
        item for item in path.iterdir()
        if item.is_file() and item.suffix.lower() in FRAME_EXTENSIONS
    )


def load_sequence(path) -> SequenceRecord:
    """
    Load one GOT-style sequence folder.

    Annotations are clamped to their frame; a target whose clamped box has no
    area is marked not visible.

    Args:
        path (str | Path): the sequence folder.

    Returns:
        SequenceRecord: frames are kept as paths and read on demand.
    """
    path = Path(path)
    groundtruth_path = path / GROUNDTRUTH_FILE
    if not groundtruth_path.is_file():
        raise StructureError(f"sequence `{path}` has no {GROUNDTRUTH_FILE}")
    with open(groundtruth_path, "r", encoding="utf-8") as file:
        boxes = parse_groundtruth_lines(file.read().splitlines(), groundtruth_path)

    frame_paths = list_frame_files(path)
    if len(frame_paths) != len(boxes):
        raise StructureError(
            f"sequence `{path.name}` has {len(frame_paths)} frames but "
            f"{len(boxes)} annotation lines"
        )

    absence_path = path / ABSENCE_FILE
    if absence_path.is_file():
        with open(absence_path, "r", encoding="utf-8") as file:
            visibility = parse_absence_lines(file.read().splitlines(), absence_path)
        if len(visibility) != len(boxes):
            raise StructureError(
                f"sequence `{path.name}` has {len(visibility)} absence lines but "
                f"{len(boxes)} annotation lines"
            )
    else:
        visibility = [True] * len(boxes)

    frame_sizes = [_array_size(frame_path) for frame_path in frame_paths]
    annotations = []
    for index, (box, size) in enumerate(zip(boxes, frame_sizes)):
        clamped = clamp_box(box, size)
        if clamped != box:
            logger.debug("%s frame %d: annotation %s clamped to %s", path.name, index, box, clamped)
        if clamped.area <= 0 and visibility[index]:
            visibility[index] = False
        annotations.append(clamped)

    return SequenceRecord(
        name=path.name,
        frames=frame_paths,
        annotations=annotations,
        visibility=visibility,
        frame_sizes=frame_sizes,
    )


def sequence_folders(root) -> List[Path]:
    root = Path(root)
    if not root.is_dir():
        raise StructureError(f"dataset root `{root}` is not a directory")
    list_path = root / LIST_FILE
    if list_path.is_file():
        with open(list_path, "r", encoding="utf-8") as file:
            names = [line.strip() for line in file if line.strip()]
        return [root / name for name in names]
    return sorted(item for item in root.iterdir() if item.is_dir())


def load_got_style(root) -> Iterator[SequenceRecord]:
    """Lazily yield every sequence below `root`, in `list.txt` order if present."""
    for folder in sequence_folders(root):
        yield load_sequence(folder)


def export_got_style(sequence: SequenceRecord, root, name: Optional[str] = None) -> Path:
    """
    Write a sequence in GOT-style layout with lossless PNG frames.

    Returns:
        Path: the written sequence folder.
    """
    folder = Path(root) / (name or sequence.name)
    folder.mkdir(parents=True, exist_ok=True)
    for index in range(len(sequence)):
        write_frame(folder / f"{index + 1:08d}.png", sequence.frame(index))
    with open(folder / GROUNDTRUTH_FILE, "w", encoding="utf-8") as file:
        for box in sequence.annotations:
            file.write(",".join(make_number_printable(value) for value in corners_to_ltwh(box)) + "\n")
    with open(folder / ABSENCE_FILE, "w", encoding="utf-8") as file:
        for visible in sequence.visibility:
            file.write("0\n" if visible else "1\n")
    return folder
