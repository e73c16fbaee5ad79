"""
Training-pair generation.

A pair is a template patch (the exact target box of one frame, resized to the
template input) and a detection patch (a randomly enlarged region around the
target in a later frame, resized to the detection input), labelled with the
target's relative offsets inside the detection patch.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .config import ModelConfig
from .errors import InvalidArgumentError, UnsampleableSequenceError
from .geometry import (
    BoundingBox,
    PatchSize,
    RelativeOffsets,
    clamp_box,
    contains,
    encode_offsets,
    scale_box,
    translate_box,
)
from .load_sequences import SequenceRecord

logger = logging.getLogger(__name__)

MAX_INTERVAL = 100
MAX_RETRIES = 100
EDGE_RULES = (1, 2, 3)


@dataclass(frozen=True)
class PairProvenance:
    sequence: str
    template_index: int
    detection_index: int
    region: BoundingBox
    rule: int

    def __str__(self):
        region = ",".join(f"{value:.1f}" for value in self.region)
        return (
            f"{self.sequence}:{self.template_index}->{self.detection_index}"
            f"[rule {self.rule}, region {region}]"
        )


@dataclass(frozen=True)
class PatchPair:
    """
    One training sample.

    Attributes:
        template: float32 (t, t, 3) patch in [0, 1].
        detection: float32 (d, d, 3) patch in [0, 1].
        label: offsets of `target` inside the detection patch.
        target: the target box in detection-patch coordinates.
        provenance: where the pair was cut from.
    """

    template: np.ndarray
    detection: np.ndarray
    label: RelativeOffsets
    target: BoundingBox
    provenance: Optional[PairProvenance] = None


def crop_and_resize(frame: np.ndarray, region: BoundingBox, out: PatchSize) -> np.ndarray:
    """
    Bilinearly resample `region` of `frame` onto an `out` grid.

    Output pixel centers are mapped onto the region with the half-pixel
    convention; samples falling past the frame border replicate the edge.

    Returns:
        np.ndarray: float32 array with the frame's channels and value scale.
    """
    if not (region.width > 0 and region.height > 0):
        raise InvalidArgumentError(f"crop region {tuple(region)} has no area")
    out_width, out_height = int(round(out.width)), int(round(out.height))
    if out_width < 1 or out_height < 1:
        raise InvalidArgumentError(f"output size must be positive, got {out_width} x {out_height}")
    scale_x = region.width / out_width
    scale_y = region.height / out_height
    # maps output pixel indices onto source pixel indices
    matrix = np.array(
        [
            [scale_x, 0.0, region.x1 + 0.5 * scale_x - 0.5],
            [0.0, scale_y, region.y1 + 0.5 * scale_y - 0.5],
        ],
        dtype=np.float64,
    )
    return cv2.warpAffine(
        np.asarray(frame, dtype=np.float32),
        matrix,
        (out_width, out_height),
        flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
        borderMode=cv2.BORDER_REPLICATE,
    )


def detection_edges(box: BoundingBox, frame: PatchSize, rule: int) -> BoundingBox:
    """
    Outer limits of the detection crop around `box`.

    Rule 1 allows a margin of one box width/height on every side, rule 2 halves
    the horizontal margin, rule 3 halves the vertical margin. Limits are
    clamped to the frame.
    """
    if rule not in EDGE_RULES:
        raise InvalidArgumentError(f"invalid edge rule {rule}. Valid options are: 1, 2, 3")
    margin_x = box.width / 2.0 if rule == 2 else box.width
    margin_y = box.height / 2.0 if rule == 3 else box.height
    return BoundingBox(
        max(0.0, box.x1 - margin_x),
        max(0.0, box.y1 - margin_y),
        min(box.x2 + margin_x, frame.width),
        min(box.y2 + margin_y, frame.height),
    )


def encode_in_crop(box: BoundingBox, region: BoundingBox, out: PatchSize) -> Tuple[BoundingBox, RelativeOffsets]:
    """Express a frame box in the coordinates of `region` resized to `out`."""
    shifted = translate_box(box, -region.x1, -region.y1)
    in_patch = scale_box(shifted, out.width / region.width, out.height / region.height)
    offsets = encode_offsets(in_patch, out)
    return in_patch, offsets


def draw_frame_indices(sequence: SequenceRecord, rng: np.random.Generator) -> Tuple[int, int]:
    """
    Template frame i uniform over 0..n-2, then interval d uniform over
    1..min(100, n-1-i); the pair is redrawn while either frame is not visible.
    """
    n_frames = len(sequence)
    if n_frames < 2 or len(sequence.visible_indices()) < 2:
        raise UnsampleableSequenceError(
            f"sequence `{sequence.name}` needs at least 2 visible frames"
        )
    for _ in range(MAX_RETRIES):
        i = int(rng.integers(0, n_frames - 1))
        j = i + int(rng.integers(1, min(MAX_INTERVAL, n_frames - 1 - i) + 1))
        if sequence.visibility[i] and sequence.visibility[j]:
            return i, j
    raise UnsampleableSequenceError(
        f"sequence `{sequence.name}`: no visible frame pair after {MAX_RETRIES} draws"
    )


def sample_pair(
    sequence: SequenceRecord,
    rng: np.random.Generator,
    model_config: ModelConfig = ModelConfig(),
) -> PatchPair:
    """
    Draw one training pair from a sequence.

    Args:
        sequence: annotated sequence with at least two visible frames.
        rng: the caller's generator; the draw is a pure function of its state.
        model_config: provides the template and detection input sizes.

    Returns:
        PatchPair: the detection crop always contains the whole target.
    """
    i, j = draw_frame_indices(sequence, rng)
    template_size = PatchSize(model_config.template_input, model_config.template_input)
    detection_size = PatchSize(model_config.detection_input, model_config.detection_input)

    template_box = clamp_box(sequence.annotations[i], sequence.frame_sizes[i])
    template = crop_and_resize(sequence.frame(i), template_box, template_size) / 255.0

    frame_size = sequence.frame_sizes[j]
    box = clamp_box(sequence.annotations[j], frame_size)
    if not (box.width > 0 and box.height > 0 and template_box.width > 0 and template_box.height > 0):
        raise UnsampleableSequenceError(
            f"sequence `{sequence.name}`: empty target box on frame {i} or {j}"
        )
    rule = int(rng.choice(EDGE_RULES))
    edges = detection_edges(box, frame_size, rule)
    region = BoundingBox(
        float(rng.uniform(edges.x1, box.x1)),
        float(rng.uniform(edges.y1, box.y1)),
        float(rng.uniform(box.x2, edges.x2)),
        float(rng.uniform(box.y2, edges.y2)),
    )
    if not contains(region, box):
        raise InvalidArgumentError(
            f"detection region {tuple(region)} does not contain target {tuple(box)}"
        )
    detection = crop_and_resize(sequence.frame(j), region, detection_size) / 255.0
    target, label = encode_in_crop(box, region, detection_size)
    label = RelativeOffsets(*np.clip(label.as_array(), -0.5, 0.5).tolist())

    return PatchPair(
        template=template.astype(np.float32),
        detection=detection.astype(np.float32),
        label=label,
        target=target,
        provenance=PairProvenance(sequence.name, i, j, region, rule),
    )


class SequencePairSource:
    """
    Regenerates training pairs from sequences every epoch.

    Batch `b` of epoch `e` is drawn from `default_rng([seed, e, b])`, so the
    batches do not depend on whether they are prepared serially or by worker
    threads.
    """

    def __init__(
        self,
        sequences: Sequence[SequenceRecord],
        model_config: ModelConfig,
        batch_size: int,
        seed: int = 0,
        num_workers: int = 0,
    ):
        self.model_config = model_config
        self.batch_size = batch_size
        self.seed = seed
        self.num_workers = num_workers
        self.sequences = [seq for seq in sequences if len(seq.visible_indices()) >= 2]
        skipped = len(sequences) - len(self.sequences)
        if skipped:
            logger.warning("skipping %d sequence(s) with fewer than 2 visible frames", skipped)
        if not self.sequences:
            raise UnsampleableSequenceError("dataset has no sequence with 2 visible frames")

    def batch(self, epoch: int, index: int) -> List[PatchPair]:
        rng = np.random.default_rng([self.seed, epoch, index])
        pairs = []
        attempts = 0
        while len(pairs) < self.batch_size:
            attempts += 1
            if attempts > MAX_RETRIES * self.batch_size:
                raise UnsampleableSequenceError(
                    f"could not fill batch {index} of epoch {epoch}"
                )
            sequence = self.sequences[int(rng.integers(0, len(self.sequences)))]
            try:
                pairs.append(sample_pair(sequence, rng, self.model_config))
            except UnsampleableSequenceError as e:
                logger.debug("redrawing: %s", e)
        return pairs

    def batches(self, epoch: int, steps: int) -> Iterator[List[PatchPair]]:
        if self.num_workers > 0:
            with ThreadPoolExecutor(max_workers=self.num_workers) as pool:
                yield from pool.map(lambda index: self.batch(epoch, index), range(steps))
        else:
            for index in range(steps):
                yield self.batch(epoch, index)


class FixedPairSource:
    """Cycles through a fixed list of pairs; the overfit fixture."""

    def __init__(self, pairs: Sequence[PatchPair], batch_size: int):
        if not pairs:
            raise UnsampleableSequenceError("no pairs given")
        self.pairs = list(pairs)
        self.batch_size = batch_size

    def batch(self, epoch: int, index: int, steps: int = 1) -> List[PatchPair]:
        start = ((epoch * steps + index) * self.batch_size) % len(self.pairs)
        return [self.pairs[(start + offset) % len(self.pairs)] for offset in range(self.batch_size)]

    def batches(self, epoch: int, steps: int) -> Iterator[List[PatchPair]]:
        for index in range(steps):
            yield self.batch(epoch, index, steps)


def sample_pairs(
    sequences: Sequence[SequenceRecord],
    count: int,
    model_config: ModelConfig,
    seed: int = 0,
) -> List[PatchPair]:
    """Draw `count` pairs in one fixed batch, e.g. to build a `FixedPairSource`."""
    return SequencePairSource(sequences, model_config, batch_size=count, seed=seed).batch(0, 0)
